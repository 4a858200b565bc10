#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "bytesleuth/common.hpp"
#include "bytesleuth/detector.hpp"
#include "bytesleuth/segmentation.hpp"

namespace bytesleuth::ex {

struct PerturbedSample {
    seg::InterpretableVector v;
    double score = 0.0;
    double kernel_weight = 0.0;
};

struct LinearExplanation {
    std::vector<double> weights;
    double intercept = 0.0;
    double ridge = 0.0;
    double residual = 0.0;  // attained weighted square loss, penalty excluded
    std::size_t sample_count = 0;
};

enum class KernelMetric { Hamming, L2Bits };

struct KernelConfig {
    KernelMetric metric = KernelMetric::Hamming;
    double sigma = 0.0;     // <= 0 selects the 0.75 * sqrt(l) default
    bool proximity = true;  // false: weight is the raw distance itself
};

inline constexpr double kDefaultRidge = 1e-3;
inline constexpr double kDefaultKeepProb = 0.5;

inline std::size_t default_sample_count(std::size_t l) { return std::max<std::size_t>(4 * l, 256); }

// Sample 0 is always the all-ones anchor; the rest draw each bit
// independently with probability keep_prob.
std::vector<seg::InterpretableVector> sample_perturbations(const seg::SuperpixelMap& map,
                                                           std::size_t count, double keep_prob,
                                                           std::uint64_t seed);

double kernel_weight(const KernelConfig& cfg, const seg::InterpretableVector& v,
                     const seg::InterpretableVector& anchor);

// Weighted ridge least squares via normal equations; the intercept is
// unpenalized. DegenerateDesign is raised only for rank-deficient designs at
// ridge == 0.
LinearExplanation fit_local_linear(const std::vector<PerturbedSample>& samples, double ridge);

LinearExplanation explain_instance(ByteView b, const seg::SuperpixelMap& map,
                                   const det::Detector& d, const seg::OcclusionPolicy& policy,
                                   const KernelConfig& cfg, std::size_t count, double ridge,
                                   std::uint64_t seed, int jobs = 1,
                                   double keep_prob = kDefaultKeepProb);

// Fractions of |weight| per bucket. Values below the first or above the last
// edge are counted in the boundary bucket so fractions always sum to 1.
std::vector<double> weight_histogram(const LinearExplanation& e,
                                     const std::vector<std::pair<double, double>>& buckets);

inline const std::vector<std::pair<double, double>> kDefaultHistogramBuckets = {
    {0.0, 0.01}, {0.01, 0.1}, {0.1, 0.2}, {0.2, 1.0}};

std::map<std::string, double> section_weight_summary(const LinearExplanation& e,
                                                     const seg::SuperpixelMap& map);

struct ExplainedInstance {
    LinearExplanation explanation;
    seg::SuperpixelMap map;
    Bytes bytes;
};

struct AdversarialPattern {
    Bytes data;
    double weight = 0.0;  // < 0 pushes benign, > 0 pushes malware
};

std::vector<AdversarialPattern> mine_adversarial_data(
    const std::vector<ExplainedInstance>& instances, double cutoff);

}  // namespace bytesleuth::ex
