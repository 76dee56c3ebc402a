// Compares the serial reference attention kernels against the OpenMP builds.
// Prints a CSV table: kernel,N,d,threads,median_ms,speedup_vs_serial,max_rel_err.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "lindit/linattn.hpp"
#include "lindit/rng.hpp"

using namespace lindit;

namespace {

double median_ms(const std::vector<double>& v_in) {
    std::vector<double> v = v_in;
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

template <class F>
double time_reps(F&& fn, int reps) {
    std::vector<double> ms;
    for (int r = 0; r < reps; ++r) {
        auto t0 = std::chrono::steady_clock::now();
        fn();
        auto t1 = std::chrono::steady_clock::now();
        ms.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return median_ms(ms);
}

double rel_err(const TensorF& a, const TensorF& b) {
    double num = 0.0, den = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        double diff = double(a.data[i]) - double(b.data[i]);
        num += diff * diff;
        den += double(b.data[i]) * double(b.data[i]);
    }
    return std::sqrt(num / (den + 1e-30));
}

}  // namespace

int main() {
    const std::size_t d = 64;
    const int reps = 5;
    int max_threads = 1;
#ifdef _OPENMP
    max_threads = omp_get_max_threads();
#endif
    std::printf("kernel,N,d,threads,median_ms,speedup_vs_serial,max_rel_err\n");
    for (std::size_t n : {512u, 1024u, 2048u}) {
        Rng rng(0x6b65726eULL + n);
        TensorF q = TensorF::zeros({n, d}), k = TensorF::zeros({n, d}), v = TensorF::zeros({n, d});
        for (auto& x : q.data) x = float(rng.normal() * 0.5);
        for (auto& x : k.data) x = float(rng.normal() * 0.5);
        for (auto& x : v.data) x = float(rng.normal() * 0.5);

        KernelStats st;
        TensorF ref = linattn_streaming_f32(q, k, v, 1e-6f, 1, &st);
        double serial_ms = time_reps([&] { linattn_streaming_f32(q, k, v, 1e-6f, 1, nullptr); }, reps);
        std::printf("streaming,%zu,%zu,1,%.4f,1.00,0\n", n, d, serial_ms);
        for (int t = 2; t <= max_threads; t *= 2) {
            TensorF out = linattn_streaming_f32(q, k, v, 1e-6f, t, nullptr);
            double ms = time_reps([&] { linattn_streaming_f32(q, k, v, 1e-6f, t, nullptr); }, reps);
            std::printf("streaming,%zu,%zu,%d,%.4f,%.2f,%.3g\n", n, d, t, ms, serial_ms / ms,
                        rel_err(out, ref));
        }

        TensorF sref = softmax_attention_f32(q, k, v, 1, nullptr);
        double soft_serial_ms = time_reps([&] { softmax_attention_f32(q, k, v, 1, nullptr); }, reps);
        std::printf("softmax,%zu,%zu,1,%.4f,1.00,0\n", n, d, soft_serial_ms);
        for (int t = 2; t <= max_threads; t *= 2) {
            TensorF out = softmax_attention_f32(q, k, v, t, nullptr);
            double ms = time_reps([&] { softmax_attention_f32(q, k, v, t, nullptr); }, reps);
            std::printf("softmax,%zu,%zu,%d,%.4f,%.2f,%.3g\n", n, d, t, ms, soft_serial_ms / ms,
                        rel_err(out, sref));
        }
    }
    return 0;
}
