#include <cmath>
#include <vector>

#include "doctest.h"

#include "lindit/linattn.hpp"
#include "lindit/rng.hpp"

using namespace lindit;

namespace {

double rel_rms(const Tensor& a, const Tensor& b) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i < a.numel(); ++i) {
        num += (a.data[i] - b.data[i]) * (a.data[i] - b.data[i]);
        den += b.data[i] * b.data[i];
    }
    return std::sqrt(num / (den + 1e-300));
}

constexpr double kEps = 1e-6;

}  // namespace

TEST_CASE("naive single token returns V when similarity positive") {
    Rng rng(1);
    Tensor q = Tensor::full({1, 4}, 0.5), k = Tensor::full({1, 4}, 0.5);
    Tensor v = rng.normal_tensor({1, 4});
    Tensor o = linear_attention_naive(q, k, v, kEps);
    for (std::size_t i = 0; i < 4; ++i) CHECK(o.data[i] == doctest::Approx(v.data[i]).epsilon(1e-5));
}

TEST_CASE("naive with identity Q=K matches V rows") {
    Tensor q = Tensor::zeros({2, 2}), v({2, 2});
    q.at(0, 0) = 1.0;
    q.at(1, 1) = 1.0;
    v.data = {1, 2, 3, 4};
    Tensor o = linear_attention_naive(q, q, v, kEps);
    CHECK(o.at(0, 0) == doctest::Approx(1.0).epsilon(1e-5));
    CHECK(o.at(0, 1) == doctest::Approx(2.0).epsilon(1e-5));
    CHECK(o.at(1, 0) == doctest::Approx(3.0).epsilon(1e-5));
    CHECK(o.at(1, 1) == doctest::Approx(4.0).epsilon(1e-5));
}

TEST_CASE("all-negative keys give near-zero output") {
    Rng rng(2);
    Tensor q = rng.normal_tensor({3, 4});
    Tensor k = Tensor::full({3, 4}, -1.0);
    Tensor v = rng.normal_tensor({3, 4});
    Tensor o = linear_attention_naive(q, k, v, kEps);
    for (double x : o.data) CHECK(std::fabs(x) <= 1e-12);
    Tensor o2 = linear_attention_streaming(q, k, v, kEps);
    for (double x : o2.data) CHECK(std::fabs(x) <= 1e-12);
}

TEST_CASE("zero V gives zero output") {
    Rng rng(3);
    Tensor q = rng.normal_tensor({5, 4}), k = rng.normal_tensor({5, 4});
    Tensor o = linear_attention_streaming(q, k, Tensor::zeros({5, 4}), kEps);
    for (double x : o.data) CHECK(x == 0.0);
}

TEST_CASE("streaming equals naive f64 across sizes") {
    Rng rng(4);
    for (std::size_t n : {1u, 2u, 3u, 5u, 16u, 64u, 256u}) {
        Tensor q = rng.normal_tensor({n, 8}), k = rng.normal_tensor({n, 8});
        Tensor v = rng.normal_tensor({n, 8});
        Tensor a = linear_attention_naive(q, k, v, kEps);
        Tensor b = linear_attention_streaming(q, k, v, kEps);
        CHECK(rel_rms(b, a) <= 1e-12);
    }
}

TEST_CASE("f32 streaming matches naive at N=1024 d=64") {
    Rng rng(5);
    std::size_t n = 1024, d = 64;
    TensorF q = TensorF::zeros({n, d}), k = TensorF::zeros({n, d}), v = TensorF::zeros({n, d});
    for (auto& x : q.data) x = float(rng.normal() * 0.3);
    for (auto& x : k.data) x = float(rng.normal() * 0.3);
    for (auto& x : v.data) x = float(rng.normal() * 0.3);
    TensorF a = linattn_naive_f32(q, k, v, 1e-6f);
    TensorF b = linattn_streaming_f32(q, k, v, 1e-6f);
    double num = 0, den = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        num += double(a.data[i] - b.data[i]) * double(a.data[i] - b.data[i]);
        den += double(a.data[i]) * double(a.data[i]);
    }
    CHECK(std::sqrt(num / den) <= 1e-5);
}

TEST_CASE("fused equals unfused multihead composition") {
    Rng rng(6);
    std::size_t n = 256, dm = 128;
    MultiHeadParams p{rng.normal_tensor({dm, 3 * dm}), rng.normal_tensor({dm, dm}), 4};
    for (auto& x : p.w_qkv.data) x *= 0.1;
    for (auto& x : p.w_out.data) x *= 0.1;
    Tensor x = rng.normal_tensor({n, dm});
    Tensor a = multihead_linear_attention(x, p, kEps);
    Tensor b = fused_multihead_linear_attention(x, p, kEps);
    CHECK(rel_rms(b, a) <= 1e-12);
}

TEST_CASE("fused heads=1 reduces to streaming on projected tensors") {
    Rng rng(7);
    std::size_t n = 16, dm = 8;
    MultiHeadParams p{rng.normal_tensor({dm, 3 * dm}), rng.normal_tensor({dm, dm}), 1};
    Tensor x = rng.normal_tensor({n, dm});
    Tensor q = Tensor::zeros({n, dm}), k = Tensor::zeros({n, dm}), v = Tensor::zeros({n, dm});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < dm; ++j)
            for (std::size_t c = 0; c < dm; ++c) {
                q.at(i, j) += x.at(i, c) * p.w_qkv.at(c, j);
                k.at(i, j) += x.at(i, c) * p.w_qkv.at(c, dm + j);
                v.at(i, j) += x.at(i, c) * p.w_qkv.at(c, 2 * dm + j);
            }
    Tensor attn = linear_attention_streaming(q, k, v, kEps);
    Tensor want = Tensor::zeros({n, dm});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < dm; ++j)
            for (std::size_t c = 0; c < dm; ++c) want.at(i, j) += attn.at(i, c) * p.w_out.at(c, j);
    Tensor got = fused_multihead_linear_attention(x, p, kEps);
    CHECK(rel_rms(got, want) <= 1e-6);
}

TEST_CASE("fused rejects bad head divisibility and zero weights give zero") {
    Rng rng(8);
    MultiHeadParams bad{Tensor::zeros({6, 18}), Tensor::zeros({6, 6}), 4};
    CHECK_THROWS_AS(fused_multihead_linear_attention(rng.normal_tensor({2, 6}), bad, kEps),
                    ConfigError);
    MultiHeadParams zp{Tensor::zeros({8, 24}), rng.normal_tensor({8, 8}), 2};
    Tensor o = fused_multihead_linear_attention(rng.normal_tensor({4, 8}), zp, kEps);
    for (double v : o.data) CHECK(v == 0.0);
}

TEST_CASE("softmax attention basics") {
    Rng rng(9);
    {
        Tensor q = rng.normal_tensor({1, 4}), k = rng.normal_tensor({1, 4});
        Tensor v = rng.normal_tensor({1, 4});
        Tensor o = softmax_attention(q, k, v);
        for (std::size_t i = 0; i < 4; ++i) CHECK(o.data[i] == doctest::Approx(v.data[i]));
    }
    {
        // a heavily scaled matching key dominates
        Tensor q = Tensor::zeros({2, 2}), v({2, 2});
        q.at(0, 0) = 1e3;
        q.at(1, 1) = 1e3;
        v.data = {1, 2, 3, 4};
        Tensor o = softmax_attention(q, q, v);
        CHECK(std::fabs(o.at(0, 0) - 1.0) <= 1e-3);
        CHECK(std::fabs(o.at(1, 1) - 4.0) <= 1e-3);
    }
    {
        // against a direct double-loop evaluation
        std::size_t n = 64, d = 8;
        Tensor q = rng.normal_tensor({n, d}), k = rng.normal_tensor({n, d});
        Tensor v = rng.normal_tensor({n, d});
        Tensor want = Tensor::zeros({n, d});
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> w(n);
            double mx = -1e300;
            for (std::size_t j = 0; j < n; ++j) {
                double s = 0;
                for (std::size_t c = 0; c < d; ++c) s += q.at(i, c) * k.at(j, c);
                w[j] = s / std::sqrt(double(d));
                mx = std::max(mx, w[j]);
            }
            double z = 0;
            for (std::size_t j = 0; j < n; ++j) {
                w[j] = std::exp(w[j] - mx);
                z += w[j];
            }
            for (std::size_t j = 0; j < n; ++j)
                for (std::size_t c = 0; c < d; ++c) want.at(i, c) += w[j] / z * v.at(j, c);
        }
        CHECK(rel_rms(softmax_attention(q, k, v), want) <= 1e-12);
    }
}

TEST_CASE("permutation equivariance of streaming attention is exact") {
    // dyadic-grid inputs make every partial sum exactly representable, so the
    // reordered accumulation is bit-identical
    Rng rng(10);
    std::size_t n = 64, d = 8;
    Tensor q = rng.dyadic_tensor({n, d}, 16, 2.0);
    Tensor k = rng.dyadic_tensor({n, d}, 16, 2.0);
    Tensor v = rng.dyadic_tensor({n, d}, 16, 2.0);
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.below(i)]);
    auto permute = [&](const Tensor& t) {
        Tensor o(t.shape);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t c = 0; c < d; ++c) o.at(i, c) = t.at(perm[i], c);
        return o;
    };
    Tensor base = linear_attention_streaming(q, k, v, kEps);
    Tensor permuted = linear_attention_streaming(permute(q), permute(k), permute(v), kEps);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t c = 0; c < d; ++c) CHECK(permuted.at(i, c) == base.at(perm[i], c));
}

TEST_CASE("streaming attention gradients pass finite differences") {
    Rng rng(12);
    std::size_t n = 4, d = 3;
    Tensor k0 = rng.normal_tensor({n, d}), v0 = rng.normal_tensor({n, d});
    auto f = [&](Tape& tp, const Var& q) {
        Var k = tp.leaf(k0), v = tp.leaf(v0);
        return sum(tp, linear_attention_streaming(tp, q, k, v, kEps));
    };
    GradCheck gc = grad_check(f, rng.normal_tensor({n, d}));
    CHECK(gc.max_rel_err <= 1e-4);
    auto fk = [&](Tape& tp, const Var& k) {
        Var q = tp.leaf(v0), v = tp.leaf(k0);
        return sum(tp, linear_attention_streaming(tp, q, k, v, kEps));
    };
    GradCheck gk = grad_check(fk, rng.normal_tensor({n, d}));
    CHECK(gk.max_rel_err <= 1e-4);
}

TEST_CASE("streaming auxiliary memory independent of N") {
    Rng rng(13);
    std::size_t d = 32;
    KernelStats s1, s2;
    for (std::size_t n : {128u, 1024u}) {
        TensorF q = TensorF::zeros({n, d}), k = TensorF::zeros({n, d}), v = TensorF::zeros({n, d});
        for (auto& x : q.data) x = float(rng.normal());
        for (auto& x : k.data) x = float(rng.normal());
        for (auto& x : v.data) x = float(rng.normal());
        linattn_streaming_f32(q, k, v, 1e-6f, 1, n == 128 ? &s1 : &s2);
    }
    CHECK(s1.aux_bytes == s2.aux_bytes);
    CHECK(s1.aux_bytes > 0);
}
