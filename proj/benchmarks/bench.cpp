// Serial vs parallel timing for the three hot kernels. Each comparison also
// checks that both paths return the same answer, so this doubles as a
// regression harness for the OpenMP code. --smoke shrinks everything far
// enough for CI.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "bytesleuth/common.hpp"
#include "bytesleuth/detector.hpp"
#include "bytesleuth/explain.hpp"
#include "bytesleuth/fastlsm.hpp"
#include "bytesleuth/segmentation.hpp"

using namespace bytesleuth;

namespace {

int max_jobs() {
#ifdef _OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

double now() {
    return std::chrono::duration<double>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

void report(const char* kernel, double serial, double parallel, bool match) {
    std::printf("%-24s %10.4f s %10.4f s %7.2fx   %s\n", kernel, serial, parallel,
                parallel > 0 ? serial / parallel : 0.0, match ? "results match" : "MISMATCH");
}

Bytes random_buffer(std::size_t size, std::uint64_t seed) {
    Rng rng(seed);
    Bytes b(size);
    for (std::size_t i = 0; i < size; ++i) b[i] = rng.next_byte();
    return b;
}

det::NgramModel random_model(std::size_t grams, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    det::NgramModel m;
    m.n = n;
    m.bias = -0.5;
    for (std::size_t g = 0; g < grams; ++g) {
        std::string gram(n, '\0');
        for (char& c : gram) c = static_cast<char>(rng.next_byte());
        m.weights.emplace_back(std::move(gram), rng.next_unit() - 0.45);
    }
    std::sort(m.weights.begin(), m.weights.end());
    m.weights.erase(std::unique(m.weights.begin(), m.weights.end(),
                                [](const auto& a, const auto& b) { return a.first == b.first; }),
                    m.weights.end());
    return m;
}

void bench_ngram(bool smoke) {
    const std::size_t grams = smoke ? 64 : 2048;
    const std::size_t size = smoke ? 64 * 1024 : 1024 * 1024;
    const int reps = smoke ? 2 : 12;

    det::NgramDetector d(random_model(grams, 4, 1));
    const Bytes buf = random_buffer(size, 2);

    d.set_jobs(1);
    double t0 = now();
    double serial_score = 0;
    for (int r = 0; r < reps; ++r) serial_score = d.score(buf);
    const double serial = now() - t0;

    d.set_jobs(max_jobs());
    t0 = now();
    double parallel_score = 0;
    for (int r = 0; r < reps; ++r) parallel_score = d.score(buf);
    const double parallel = now() - t0;

    report("ngram-presence-scan", serial, parallel, serial_score == parallel_score);
}

void bench_explain(bool smoke) {
    const std::size_t size = smoke ? 32 * 1024 : 256 * 1024;
    const std::size_t samples = smoke ? 128 : 1024;

    Bytes buf = random_buffer(size, 3);
    Bytes sig(24);
    for (std::size_t i = 0; i < sig.size(); ++i) sig[i] = static_cast<std::uint8_t>(0xd0 + i);
    std::copy(sig.begin(), sig.end(), buf.begin() + static_cast<long>(size / 2));
    det::PlantedSignatureDetector d(0.3, {{sig, 0.6}});
    const seg::SuperpixelMap map = seg::segment_by_offset(buf.size(), 1024);

    const double t0 = now();
    const ex::LinearExplanation a = ex::explain_instance(
        buf, map, d, seg::ZeroFill{}, ex::KernelConfig{}, samples, ex::kDefaultRidge, 7, 1);
    const double serial = now() - t0;

    const double t1 = now();
    const ex::LinearExplanation b =
        ex::explain_instance(buf, map, d, seg::ZeroFill{}, ex::KernelConfig{}, samples,
                             ex::kDefaultRidge, 7, max_jobs());
    const double parallel = now() - t1;

    report("surrogate-sampling", serial, parallel,
           a.weights == b.weights && a.intercept == b.intercept);
}

void bench_brute_force(bool smoke) {
    const std::size_t size = smoke ? 64 * 1024 : 1024 * 1024;
    const std::size_t window = smoke ? 4096 : 4096;

    Bytes buf = random_buffer(size, 4);
    Bytes sig(32);
    for (std::size_t i = 0; i < sig.size(); ++i) sig[i] = static_cast<std::uint8_t>(0xa0 + i);
    std::copy(sig.begin(), sig.end(), buf.begin() + static_cast<long>(size / 3));
    det::PlantedSignatureDetector d(0.2, {{sig, 0.7}});

    const double t0 = now();
    const lsm::HotRegion a = lsm::brute_force_hot_region(buf, d, window, seg::ZeroFill{}, 1);
    const double serial = now() - t0;

    const double t1 = now();
    const lsm::HotRegion b =
        lsm::brute_force_hot_region(buf, d, window, seg::ZeroFill{}, max_jobs());
    const double parallel = now() - t1;

    report("brute-force-occlusion", serial, parallel,
           a.start == b.start && a.end == b.end && a.drop == b.drop);
}

}  // namespace

int main(int argc, char** argv) {
    bool smoke = false;
    for (int i = 1; i < argc; ++i)
        if (std::strcmp(argv[i], "--smoke") == 0) smoke = true;

    std::printf("threads: %d%s\n", max_jobs(), smoke ? " (smoke sizes)" : "");
    std::printf("%-24s %12s %12s %9s\n", "kernel", "serial", "parallel", "speedup");
    bench_ngram(smoke);
    bench_explain(smoke);
    bench_brute_force(smoke);
    return 0;
}
