#include <cmath>
#include <cstdint>

#include "doctest.h"

#include "lindit/quant.hpp"
#include "lindit/rng.hpp"

using namespace lindit;

TEST_CASE("per-token quantization values") {
    {
        Tensor x({1, 2});
        x.data = {127, -127};
        QuantTensor q = quantize_per_token(x);
        CHECK(q.values[0] == 127);
        CHECK(q.values[1] == -127);
        CHECK(q.scales[0] == doctest::Approx(1.0).epsilon(1e-15));
    }
    {
        Tensor x = Tensor::zeros({2, 3});
        QuantTensor q = quantize_per_token(x);
        for (auto v : q.values) CHECK(v == 0);
        Tensor d = dequantize(q);
        for (double v : d.data) CHECK(v == 0.0);
    }
    for (double c : {0.01, 1.0, 37.5}) {
        Tensor x({1, 2});
        x.data = {c, 0.5 * c};
        QuantTensor q = quantize_per_token(x);
        CHECK(q.values[0] == 127);
        CHECK(q.values[1] == 64);  // 63.5 rounds half-to-even to 64
    }
    Tensor bad({1, 1});
    bad.data = {std::nan("")};
    CHECK_THROWS_AS(quantize_per_token(bad), NumericError);
}

TEST_CASE("per-channel quantization values and homogeneity") {
    {
        Tensor w = Tensor::zeros({4, 2});
        w.at(0, 0) = 1.0;
        w.at(1, 1) = 0.25;
        QuantTensor q = quantize_per_channel(w);
        CHECK(q.values[0] == 127);
        CHECK(q.scales[0] == doctest::Approx(1.0 / 127.0).epsilon(1e-15));
        CHECK(q.values[1 * 2 + 1] == 127);
        CHECK(q.scales[1] == doctest::Approx(0.25 / 127.0).epsilon(1e-15));
    }
    Rng rng(3);
    Tensor w = rng.normal_tensor({8, 8});
    Tensor w2 = w;
    for (double& v : w2.data) v *= 2.0;
    QuantTensor qa = quantize_per_channel(w), qb = quantize_per_channel(w2);
    for (std::size_t i = 0; i < qa.values.size(); ++i) CHECK(qa.values[i] == qb.values[i]);
    for (std::size_t i = 0; i < qa.scales.size(); ++i)
        CHECK(qb.scales[i] == doctest::Approx(2.0 * qa.scales[i]).epsilon(1e-15));
}

TEST_CASE("round trip error bounded by half a scale step") {
    Rng rng(4);
    {
        Tensor x = rng.normal_tensor({16, 8});
        QuantTensor q = quantize_per_token(x);
        Tensor d = dequantize(q);
        for (std::size_t r = 0; r < 16; ++r)
            for (std::size_t c = 0; c < 8; ++c)
                CHECK(std::fabs(d.at(r, c) - x.at(r, c)) <= q.scales[r] * 0.5 + 1e-15);
    }
    {
        Tensor w = rng.normal_tensor({8, 16});
        QuantTensor q = quantize_per_channel(w);
        Tensor d = dequantize(q);
        for (std::size_t r = 0; r < 8; ++r)
            for (std::size_t c = 0; c < 16; ++c)
                CHECK(std::fabs(d.at(r, c) - w.at(r, c)) <= q.scales[c] * 0.5 + 1e-15);
    }
}

TEST_CASE("qgemm integer path is exact") {
    {
        // integer lattice with scale 1: qgemm equals the float product exactly
        Tensor a({2, 3}), w({3, 2});
        a.data = {127, -3, 5, 0, 8, -127};
        w.data = {127, 1, -2, 4, 3, -127};
        QuantTensor qa = quantize_per_token(a);  // scales become exact /127 multiples
        QuantTensor qw = quantize_per_channel(w);
        Tensor got = qgemm(qa, qw);
        Tensor da = dequantize(qa), dw = dequantize(qw);
        for (std::size_t i = 0; i < 2; ++i)
            for (std::size_t j = 0; j < 2; ++j) {
                double want = 0;
                for (std::size_t k = 0; k < 3; ++k) want += da.at(i, k) * dw.at(k, j);
                CHECK(std::fabs(got.at(i, j) - want) <= 1e-10 * std::max(1.0, std::fabs(want)));
            }
    }
    {
        // against a 64-bit integer accumulation oracle
        Rng rng(5);
        Tensor a = rng.normal_tensor({8, 16}), w = rng.normal_tensor({16, 8});
        QuantTensor qa = quantize_per_token(a), qw = quantize_per_channel(w);
        Tensor got = qgemm(qa, qw);
        for (std::size_t i = 0; i < 8; ++i)
            for (std::size_t j = 0; j < 8; ++j) {
                std::int64_t acc = 0;
                for (std::size_t k = 0; k < 16; ++k)
                    acc += std::int64_t(qa.values[i * 16 + k]) * std::int64_t(qw.values[k * 8 + j]);
                double want = double(acc) * qa.scales[i] * qw.scales[j];
                CHECK(got.at(i, j) == want);
            }
    }
    {
        // zero activation row stays a zero output row
        Tensor a = Tensor::zeros({2, 4});
        a.at(1, 0) = 1.0;
        Rng rng(6);
        Tensor w = rng.normal_tensor({4, 4});
        Tensor got = qgemm(quantize_per_token(a), quantize_per_channel(w));
        for (std::size_t j = 0; j < 4; ++j) CHECK(got.at(0, j) == 0.0);
    }
}

TEST_CASE("qgemm tracks the f64 product on random matrices") {
    Rng rng(7);
    Tensor a = rng.normal_tensor({64, 64}), w = rng.normal_tensor({64, 64});
    Tensor got = qgemm(quantize_per_token(a), quantize_per_channel(w));
    double num = 0, den = 0;
    for (std::size_t i = 0; i < 64; ++i)
        for (std::size_t j = 0; j < 64; ++j) {
            double want = 0;
            for (std::size_t k = 0; k < 64; ++k) want += a.at(i, k) * w.at(k, j);
            num += (got.at(i, j) - want) * (got.at(i, j) - want);
            den += want * want;
        }
    CHECK(std::sqrt(num / den) <= 1e-2);
}

TEST_CASE("model quantization policy") {
    LinearDiTConfig cfg{8, 2, 10, 2, 16};
    LatentGeometry g{4, 4, 1, 2, 1};
    LinearDiTModel m = build_model(cfg, g, 11);
    Rng rng(12);
    Tensor lat = rng.normal_tensor({2, 4, 4});
    Tensor ctx = rng.normal_tensor({2, 16});
    {
        // exempting everything leaves forward bitwise intact
        QuantModel qm = quantize_model(m, QuantPolicy::exempt_all());
        CHECK(qm.qweights.empty());
        Tensor a = forward(m, lat, 0.5, ctx);
        Tensor b = qforward(qm, lat, 0.5, ctx);
        for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a.data[i] == b.data[i]);
    }
    {
        QuantModel qm = quantize_model(m, QuantPolicy::defaults());
        CHECK(!qm.qweights.empty());
        // structural scan: no exempt role among quantized weights
        for (const auto& [name, qt] : qm.qweights) {
            const auto& role = m.params[m.index.at(name)].role;
            CHECK(qm.policy.exempt_roles.count(role) == 0);
        }
        std::vector<Tensor> probes;
        for (int i = 0; i < 64; ++i) probes.push_back(rng.normal_tensor({2, 4, 4}));
        auto rows = fidelity_report(m, qm, probes, 0.5, ctx);
        CHECK(rows.size() == qm.qweights.size() + 1);
        CHECK(rows.back().layer == "end_to_end");
        CHECK(rows.back().cos_sim >= 0.99);
    }
    QuantPolicy bad;
    bad.exempt_roles = {"norm", "banana"};
    CHECK_THROWS_AS(quantize_model(m, bad), ConfigError);
}
