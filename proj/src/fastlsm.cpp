#include "bytesleuth/fastlsm.hpp"

#include <algorithm>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "bytesleuth/explain.hpp"

namespace bytesleuth::lsm {

namespace {

double score_with_gap(ByteView b, const det::Detector& d, std::size_t start, std::size_t end,
                      const seg::OcclusionPolicy& policy) {
    Bytes variant(b.begin(), b.end());
    seg::fill_region(variant, start, end - start, policy);
    return d.score(variant);
}

}  // namespace

HotRegion fast_lsm(ByteView b, const det::Detector& d, const FastLsmConfig& cfg,
                   std::uint64_t seed) {
    if (b.empty()) fail(Errc::EmptyInput, "cannot search an empty input");
    if (cfg.n < 2) fail(Errc::InvariantViolation, "branching factor must be at least 2");
    if (cfg.beta < 1) fail(Errc::InvariantViolation, "target size must be at least 1");

    const double base = d.score(b);

    // level 0: least-squares weights over n equal sections (diagnostic; the
    // strongest-section pick is advisory and the descent re-derives it)
    if (b.size() >= cfg.n) {
        seg::SuperpixelMap level0;
        level0.file_length = b.size();
        const std::size_t part = b.size() / cfg.n;
        for (std::size_t i = 0; i < cfg.n; ++i) {
            const std::size_t lo = i * part;
            const std::size_t hi = i + 1 == cfg.n ? b.size() : lo + part;
            level0.pixels.push_back({lo, hi - lo, std::nullopt});
        }
        ex::explain_instance(b, level0, d, cfg.policy, ex::KernelConfig{}, 4 * cfg.n,
                             ex::kDefaultRidge, sub_seed(seed, "fastlsm-level0"));
    }

    std::size_t start = 0, end = b.size();
    std::uint64_t refinement = 0;
    double last_score = base;
    bool descended = false;

    while (end - start > cfg.beta) {
        const std::size_t part = (end - start) / cfg.n;
        if (part == 0) break;
        std::size_t best_start = start, best_end = end;
        double best_score = 0.0;
        bool first = true;
        for (std::size_t i = 0; i < cfg.n; ++i) {
            const std::size_t lo = start + i * part;
            const std::size_t hi = i + 1 == cfg.n ? end : lo + part;
            const double s = score_with_gap(b, d, lo, hi, cfg.policy);
            ++refinement;
            if (first || s < best_score) {  // ties keep the lowest start
                best_score = s;
                best_start = lo;
                best_end = hi;
                first = false;
            }
        }
        start = best_start;
        end = best_end;
        last_score = best_score;
        descended = true;
    }

    HotRegion r;
    r.start = start;
    r.end = end;
    r.queries_used = refinement;
    if (descended) {
        r.drop = base - last_score;
    } else {
        // no split happened; one diagnostic occlusion gives the drop
        r.drop = base - score_with_gap(b, d, start, end, cfg.policy);
    }
    return r;
}

HotRegion brute_force_hot_region(ByteView b, const det::Detector& d, std::size_t window,
                                 const seg::OcclusionPolicy& policy, int jobs) {
    if (b.empty()) fail(Errc::EmptyInput, "cannot search an empty input");
    if (window == 0 || window > b.size())
        fail(Errc::InvariantViolation, "window must lie in [1, input length]");

    const double base = d.score(b);
    const std::size_t count = (b.size() + window - 1) / window;
    std::vector<double> drops(count, 0.0);

    const bool parallel = jobs > 1 && d.concurrent_safe();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(jobs) if (parallel)
#endif
    for (long long k = 0; k < static_cast<long long>(count); ++k) {
        const std::size_t lo = static_cast<std::size_t>(k) * window;
        const std::size_t hi = std::min(lo + window, b.size());
        drops[static_cast<std::size_t>(k)] = base - score_with_gap(b, d, lo, hi, policy);
    }

    std::size_t best = 0;
    for (std::size_t k = 1; k < count; ++k)
        if (drops[k] > drops[best]) best = k;

    HotRegion r;
    r.start = best * window;
    r.end = std::min(r.start + window, b.size());
    r.drop = drops[best];
    r.queries_used = count + 1;
    return r;
}

}  // namespace bytesleuth::lsm
