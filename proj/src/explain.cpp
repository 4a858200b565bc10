#include "bytesleuth/explain.hpp"

#include <algorithm>
#include <cmath>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace bytesleuth::ex {

std::vector<seg::InterpretableVector> sample_perturbations(const seg::SuperpixelMap& map,
                                                           std::size_t count, double keep_prob,
                                                           std::uint64_t seed) {
    if (count < 1) fail(Errc::InvariantViolation, "sample count must be at least 1");
    if (!(keep_prob > 0.0 && keep_prob < 1.0))
        fail(Errc::InvariantViolation, "keep_prob must lie strictly between 0 and 1");

    const std::size_t l = map.pixels.size();
    std::vector<seg::InterpretableVector> out;
    out.reserve(count);
    out.push_back(seg::InterpretableVector::ones(l));

    Rng rng(sub_seed(seed, "perturb"));
    for (std::size_t s = 1; s < count; ++s) {
        seg::InterpretableVector v;
        v.bits.resize(l);
        for (std::size_t i = 0; i < l; ++i) v.bits[i] = rng.next_bernoulli(keep_prob) ? 1 : 0;
        out.push_back(std::move(v));
    }
    return out;
}

double kernel_weight(const KernelConfig& cfg, const seg::InterpretableVector& v,
                     const seg::InterpretableVector& anchor) {
    if (v.size() != anchor.size())
        fail(Errc::LengthMismatch, "vectors of length " + std::to_string(v.size()) + " and " +
                                       std::to_string(anchor.size()));
    std::size_t hamming = 0;
    for (std::size_t i = 0; i < v.size(); ++i) hamming += v.bits[i] != anchor.bits[i];

    const double dist = cfg.metric == KernelMetric::Hamming
                            ? static_cast<double>(hamming)
                            : std::sqrt(static_cast<double>(hamming));
    if (!cfg.proximity) return dist;
    const double sigma =
        cfg.sigma > 0.0 ? cfg.sigma : 0.75 * std::sqrt(static_cast<double>(v.size()));
    return std::exp(-(dist * dist) / (sigma * sigma));
}

LinearExplanation fit_local_linear(const std::vector<PerturbedSample>& samples, double ridge) {
    if (samples.empty()) fail(Errc::DegenerateDesign, "no samples to fit");
    const std::size_t l = samples[0].v.size();
    for (const PerturbedSample& s : samples)
        if (s.v.size() != l) fail(Errc::LengthMismatch, "samples with mixed vector lengths");

    // normal equations over (intercept, w_1..w_l); x_0 == 1
    const std::size_t m = l + 1;
    std::vector<double> a(m * m, 0.0), rhs(m, 0.0), x(m, 1.0);
    for (const PerturbedSample& s : samples) {
        for (std::size_t i = 0; i < l; ++i) x[i + 1] = s.v.bits[i];
        const double pi = s.kernel_weight;
        for (std::size_t r = 0; r < m; ++r) {
            if (x[r] == 0.0) continue;
            const double xr = pi * x[r];
            for (std::size_t c = r; c < m; ++c) a[r * m + c] += xr * x[c];
            rhs[r] += xr * s.score;
        }
    }
    for (std::size_t r = 1; r < m; ++r) a[r * m + r] += ridge;
    for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < r; ++c) a[r * m + c] = a[c * m + r];

    // Cholesky, in place: a = L L^T with L in the lower triangle
    double max_diag = 0.0;
    for (std::size_t r = 0; r < m; ++r) max_diag = std::max(max_diag, a[r * m + r]);
    const double tol = std::max(max_diag, 1.0) * 1e-12;
    for (std::size_t r = 0; r < m; ++r) {
        for (std::size_t c = 0; c <= r; ++c) {
            double sum = a[r * m + c];
            for (std::size_t k = 0; k < c; ++k) sum -= a[r * m + k] * a[c * m + k];
            if (r == c) {
                if (sum <= tol)
                    fail(Errc::DegenerateDesign,
                         "design is rank deficient at row " + std::to_string(r) +
                             (ridge == 0.0 ? " with ridge 0" : ""));
                a[r * m + r] = std::sqrt(sum);
            } else {
                a[r * m + c] = sum / a[c * m + c];
            }
        }
    }
    std::vector<double> y(m, 0.0);
    for (std::size_t r = 0; r < m; ++r) {
        double sum = rhs[r];
        for (std::size_t k = 0; k < r; ++k) sum -= a[r * m + k] * y[k];
        y[r] = sum / a[r * m + r];
    }
    std::vector<double> beta(m, 0.0);
    for (std::size_t r = m; r-- > 0;) {
        double sum = y[r];
        for (std::size_t k = r + 1; k < m; ++k) sum -= a[k * m + r] * beta[k];
        beta[r] = sum / a[r * m + r];
    }

    LinearExplanation e;
    e.intercept = beta[0];
    e.weights.assign(beta.begin() + 1, beta.end());
    e.ridge = ridge;
    e.sample_count = samples.size();
    for (const PerturbedSample& s : samples) {
        double pred = e.intercept;
        for (std::size_t i = 0; i < l; ++i)
            if (s.v.bits[i]) pred += e.weights[i];
        const double err = s.score - pred;
        e.residual += s.kernel_weight * err * err;
    }
    return e;
}

LinearExplanation explain_instance(ByteView b, const seg::SuperpixelMap& map,
                                   const det::Detector& d, const seg::OcclusionPolicy& policy,
                                   const KernelConfig& cfg, std::size_t count, double ridge,
                                   std::uint64_t seed, int jobs, double keep_prob) {
    if (b.empty()) fail(Errc::EmptyFile, "cannot explain an empty input");

    const std::vector<seg::InterpretableVector> vectors =
        sample_perturbations(map, count, keep_prob, seed);
    std::vector<double> scores(vectors.size(), 0.0);

    const bool parallel = jobs > 1 && d.concurrent_safe();
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(jobs) if (parallel)
#endif
    for (long long i = 0; i < static_cast<long long>(vectors.size()); ++i) {
        const Bytes variant =
            seg::mask_to_bytes(b, map, vectors[static_cast<std::size_t>(i)], policy);
        scores[static_cast<std::size_t>(i)] = d.score(variant);
    }

    std::vector<PerturbedSample> samples;
    samples.reserve(vectors.size());
    for (std::size_t i = 0; i < vectors.size(); ++i) {
        PerturbedSample s;
        s.kernel_weight = kernel_weight(cfg, vectors[i], vectors[0]);
        s.v = vectors[i];
        s.score = scores[i];
        samples.push_back(std::move(s));
    }
    return fit_local_linear(samples, ridge);
}

std::vector<double> weight_histogram(const LinearExplanation& e,
                                     const std::vector<std::pair<double, double>>& buckets) {
    std::vector<double> fractions(buckets.size(), 0.0);
    if (e.weights.empty() || buckets.empty()) return fractions;

    for (double w : e.weights) {
        const double a = std::fabs(w);
        std::size_t hit = buckets.size() - 1;  // above the last edge clamps down
        if (a < buckets.front().first) {
            hit = 0;
        } else {
            for (std::size_t i = 0; i < buckets.size(); ++i) {
                const bool last = i + 1 == buckets.size();
                if (a >= buckets[i].first && (a < buckets[i].second || (last && a <= buckets[i].second))) {
                    hit = i;
                    break;
                }
            }
        }
        fractions[hit] += 1.0;
    }
    for (double& f : fractions) f /= static_cast<double>(e.weights.size());
    return fractions;
}

std::map<std::string, double> section_weight_summary(const LinearExplanation& e,
                                                     const seg::SuperpixelMap& map) {
    if (e.weights.size() != map.pixels.size())
        fail(Errc::LengthMismatch, "explanation does not match the map");
    std::map<std::string, double> sums;
    for (std::size_t i = 0; i < map.pixels.size(); ++i) {
        if (!map.pixels[i].label)
            fail(Errc::UnlabeledMap, "pixel " + std::to_string(i) + " carries no section label");
        sums[*map.pixels[i].label] += e.weights[i];
    }
    return sums;
}

std::vector<AdversarialPattern> mine_adversarial_data(
    const std::vector<ExplainedInstance>& instances, double cutoff) {
    if (!(cutoff > 0.0)) fail(Errc::InvariantViolation, "cutoff must be positive");
    std::vector<AdversarialPattern> corpus;
    for (const ExplainedInstance& inst : instances) {
        if (inst.explanation.weights.size() != inst.map.pixels.size())
            fail(Errc::LengthMismatch, "explanation does not match its map");
        for (std::size_t i = 0; i < inst.map.pixels.size(); ++i) {
            const double w = inst.explanation.weights[i];
            if (w <= cutoff && w >= -cutoff) continue;
            const seg::Superpixel& p = inst.map.pixels[i];
            if (p.start + p.length > inst.bytes.size())
                fail(Errc::OutOfBounds, "pixel extends past the instance bytes");
            AdversarialPattern pat;
            pat.data.assign(inst.bytes.begin() + static_cast<long>(p.start),
                            inst.bytes.begin() + static_cast<long>(p.start + p.length));
            pat.weight = w;
            corpus.push_back(std::move(pat));
        }
    }
    return corpus;
}

}  // namespace bytesleuth::ex
