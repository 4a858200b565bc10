#pragma once

#include "bytesleuth/common.hpp"
#include "bytesleuth/detector.hpp"
#include "bytesleuth/segmentation.hpp"

namespace bytesleuth::lsm {

struct FastLsmConfig {
    std::size_t n = 2;        // branching factor
    std::size_t beta = 1024;  // target occlusion size in bytes
    seg::OcclusionPolicy policy = seg::ZeroFill{};
};

struct HotRegion {
    std::size_t start = 0;
    std::size_t end = 0;
    double drop = 0.0;  // score(original) - score(occluded region)
    // fast_lsm reports refinement (descent) queries only, matching the
    // complexity claim; brute_force_hot_region reports every query it issued
    std::uint64_t queries_used = 0;
};

// Hierarchical occlusion search. A level-0 least-squares pass over n equal
// sections is fitted as a diagnostic (4n queries); the descent itself starts
// from the whole file and narrows by a factor of n per level, so refinement
// cost is exactly n per level. Ties break toward the lowest start offset.
HotRegion fast_lsm(ByteView b, const det::Detector& d, const FastLsmConfig& cfg,
                   std::uint64_t seed = 0);

// Exhaustive oracle: occlude every window-aligned region, return the global
// maximum drop.
HotRegion brute_force_hot_region(ByteView b, const det::Detector& d, std::size_t window,
                                 const seg::OcclusionPolicy& policy, int jobs = 1);

}  // namespace bytesleuth::lsm
