#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bytesleuth/common.hpp"
#include "bytesleuth/detector.hpp"
#include "bytesleuth/explain.hpp"
#include "bytesleuth/fastlsm.hpp"
#include "bytesleuth/segmentation.hpp"
#include "bytesleuth/transform.hpp"
#include "bytesleuth/verifier.hpp"

namespace bytesleuth::atk {

struct AttackConfig {
    int max_iterations = 200;
    double size_budget_fraction = 0.05;
    std::size_t chunk = seg::kDefaultChunk;
    // set: region search replaces the full surrogate every round; unset: the
    // surrogate runs unless the map grows past 512 pixels, where the search
    // takes over as the cheaper drop-in
    std::optional<lsm::FastLsmConfig> fastlsm;
    seg::OcclusionPolicy filler = seg::ZeroFill{};
    bool allow_append = true;
    bool allow_disp = true;
    bool allow_datadisp = true;
    std::uint64_t seed = 0;
    double ridge = ex::kDefaultRidge;
    ex::KernelConfig kernel;
    std::size_t samples = 0;  // 0: max(4l, 256)
    double keep_prob = ex::kDefaultKeepProb;
    std::vector<seg::BlockRecord> listing;  // basic blocks eligible for Disp
    int jobs = 1;
    double mine_cutoff = 0.05;
};

struct AttackRound {
    int index = 0;
    std::vector<std::pair<std::size_t, double>> top_weights;
    ByteRange chosen_region{};
    tf::ActionKind action = tf::ActionKind::Append;
    bool applied = false;  // false: planning or verification rejected the round
    double score_before = 0.0;
    double score_after = 0.0;
    std::size_t size_so_far = 0;
    std::uint64_t queries_so_far = 0;
};

enum class Outcome { Evaded, BudgetExceeded, IterationsExhausted, AlreadyBenign };
const char* outcome_name(Outcome o);

struct AttackTrace {
    std::vector<AttackRound> rounds;
    Outcome outcome = Outcome::IterationsExhausted;
    Bytes final_bytes;
    std::uint64_t total_queries = 0;
    std::vector<vf::PlanOutline> plans;  // applied chain, in order
};

// Greedy solve of the surrogate constraint: removes present pixels in
// descending positive-weight order (ties toward the lower index) until the
// predicted score falls below the threshold or no positive-weight pixel is
// left. Returns the removed indices.
std::vector<std::size_t> select_perturbation(const ex::LinearExplanation& e,
                                             const seg::SuperpixelMap& map,
                                             const seg::InterpretableVector& current_v,
                                             double threshold);

AttackTrace run_attack(ByteView b, const det::Detector& d, const AttackConfig& cfg);

struct BaselineReport {
    int variants_tried = 0;
    int flips = 0;
    bool success = false;  // at least one variant flipped the verdict
    std::optional<int> first_flip;
    double flip_size_growth = 0.0;
    std::uint64_t total_queries = 0;
};

// Every superpixel is independently transformed with probability 1/2, pixels
// visited in index order while the size budget still has room.
BaselineReport run_random_baseline(ByteView b, const det::Detector& d, const AttackConfig& cfg,
                                   int variants);

struct StrategyResult {
    std::string name;
    bool success = false;
    int rounds = 0;
    std::uint64_t queries = 0;
    double size_growth = 0.0;
};

std::vector<StrategyResult> compare_strategies(ByteView b, const det::Detector& d,
                                               const AttackConfig& cfg);

}  // namespace bytesleuth::atk
