#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numeric>

#include "bytesleuth/explain.hpp"

using namespace bytesleuth;
using namespace bytesleuth::ex;

namespace {

Bytes ascii(const char* s) { return Bytes(s, s + std::strlen(s)); }

seg::SuperpixelMap grid(std::size_t pixels, std::size_t pixel_len) {
    return seg::segment_by_offset(pixels * pixel_len, pixel_len);
}

seg::InterpretableVector vec(std::initializer_list<int> bits) {
    seg::InterpretableVector v;
    for (int b : bits) v.bits.push_back(static_cast<std::uint8_t>(b));
    return v;
}

std::size_t set_bits(const seg::InterpretableVector& v) {
    return static_cast<std::size_t>(std::count(v.bits.begin(), v.bits.end(), 1));
}

// independent dense solver (Gauss-Jordan with partial pivoting), used as the
// oracle for the normal-equation path
std::vector<double> solve_dense(std::vector<std::vector<double>> a, std::vector<double> y) {
    const std::size_t n = y.size();
    for (std::size_t col = 0; col < n; ++col) {
        std::size_t pivot = col;
        for (std::size_t r = col + 1; r < n; ++r)
            if (std::fabs(a[r][col]) > std::fabs(a[pivot][col])) pivot = r;
        std::swap(a[col], a[pivot]);
        std::swap(y[col], y[pivot]);
        REQUIRE(std::fabs(a[col][col]) > 1e-14);
        for (std::size_t r = 0; r < n; ++r) {
            if (r == col) continue;
            const double f = a[r][col] / a[col][col];
            for (std::size_t c = col; c < n; ++c) a[r][c] -= f * a[col][c];
            y[r] -= f * y[col];
        }
    }
    std::vector<double> x(n);
    for (std::size_t i = 0; i < n; ++i) x[i] = y[i] / a[i][i];
    return x;
}

// weighted ridge objective, computed independently of the library
double objective(const std::vector<PerturbedSample>& samples, const std::vector<double>& w,
                 double intercept, double ridge) {
    double loss = 0.0;
    for (const PerturbedSample& s : samples) {
        double pred = intercept;
        for (std::size_t i = 0; i < w.size(); ++i)
            if (s.v.bits[i]) pred += w[i];
        loss += s.kernel_weight * (s.score - pred) * (s.score - pred);
    }
    double pen = 0.0;
    for (double x : w) pen += x * x;
    return loss + ridge * pen;
}

}  // namespace

TEST_CASE("sample_perturbations anchors on the all-ones vector") {
    const seg::SuperpixelMap map = grid(5, 4);
    const auto one = sample_perturbations(map, 1, 0.5, 7);
    REQUIRE(one.size() == 1);
    CHECK(one[0].bits == seg::InterpretableVector::ones(5).bits);

    const auto many = sample_perturbations(map, 50, 0.5, 7);
    CHECK(set_bits(many[0]) == 5);
    CHECK(sample_perturbations(map, 50, 0.5, 7)[13].bits == many[13].bits);
    CHECK(sample_perturbations(map, 50, 0.5, 8)[13].bits != many[13].bits);
}

TEST_CASE("sample bit fraction concentrates at keep_prob") {
    const seg::SuperpixelMap map = grid(100, 1);
    const auto samples = sample_perturbations(map, 10000, 0.5, 3);
    std::size_t ones = 0;
    for (std::size_t j = 1; j < samples.size(); ++j) ones += set_bits(samples[j]);
    const double fraction = static_cast<double>(ones) / (9999.0 * 100.0);
    CHECK(fraction > 0.49);
    CHECK(fraction < 0.51);
}

TEST_CASE("kernel weight follows exp(-d^2/sigma^2)") {
    KernelConfig cfg;
    cfg.sigma = 2.0;
    const auto anchor = vec({1, 1, 1, 1});
    CHECK(kernel_weight(cfg, anchor, anchor) == doctest::Approx(1.0));

    const auto d1 = vec({1, 1, 1, 0});
    const auto d3 = vec({0, 0, 1, 0});
    CHECK(kernel_weight(cfg, d1, anchor) == doctest::Approx(std::exp(-1.0 / 4.0)));
    CHECK(kernel_weight(cfg, d3, anchor) == doctest::Approx(std::exp(-9.0 / 4.0)));
    CHECK(kernel_weight(cfg, d3, anchor) < kernel_weight(cfg, d1, anchor));

    KernelConfig l2;
    l2.metric = KernelMetric::L2Bits;
    l2.sigma = 2.0;
    // L2 over bits is sqrt(hamming), so d^2 collapses to d
    CHECK(kernel_weight(l2, d3, anchor) == doctest::Approx(std::exp(-3.0 / 4.0)));

    KernelConfig raw;
    raw.sigma = 2.0;
    raw.proximity = false;  // the raw-distance weighting variant
    CHECK(kernel_weight(raw, d3, anchor) == doctest::Approx(3.0));

    try {
        kernel_weight(cfg, vec({1, 0}), anchor);
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.code() == Errc::LengthMismatch);
    }
}

TEST_CASE("default sigma is 0.75 sqrt(l)") {
    KernelConfig cfg;  // sigma unset
    const auto anchor = vec({1, 1, 1, 1});
    const auto far = vec({0, 1, 1, 1});
    const double sigma = 0.75 * std::sqrt(4.0);
    CHECK(kernel_weight(cfg, far, anchor) == doctest::Approx(std::exp(-1.0 / (sigma * sigma))));
}

TEST_CASE("fit recovers an exactly linear detector") {
    // f = 0.3 v1 + 0.1 v2 + 0.05 over the full two-bit design
    std::vector<PerturbedSample> samples;
    for (int b1 : {0, 1})
        for (int b2 : {0, 1})
            samples.push_back({vec({b1, b2}), 0.3 * b1 + 0.1 * b2 + 0.05, 1.0});

    const LinearExplanation e = fit_local_linear(samples, 0.0);
    CHECK(std::fabs(e.weights[0] - 0.3) < 1e-9);
    CHECK(std::fabs(e.weights[1] - 0.1) < 1e-9);
    CHECK(std::fabs(e.intercept - 0.05) < 1e-9);
    CHECK(e.residual < 1e-18);
    CHECK(e.sample_count == 4);
}

TEST_CASE("fit of a constant detector is the constant") {
    std::vector<PerturbedSample> samples;
    for (int b1 : {0, 1})
        for (int b2 : {0, 1}) samples.push_back({vec({b1, b2}), 0.5, 0.7});
    const LinearExplanation e = fit_local_linear(samples, 1e-3);
    CHECK(std::fabs(e.weights[0]) < 1e-9);
    CHECK(std::fabs(e.weights[1]) < 1e-9);
    CHECK(e.intercept == doctest::Approx(0.5));
}

TEST_CASE("fit agrees with an independent normal-equation solve") {
    // the four two-bit masks with genuine kernel weights and a linear scorer
    KernelConfig cfg;
    cfg.sigma = 1.5;
    const auto anchor = vec({1, 1});
    std::vector<PerturbedSample> samples;
    for (int b1 : {1, 0})
        for (int b2 : {1, 0}) {
            PerturbedSample s;
            s.v = vec({b1, b2});
            s.score = 0.22 * b1 - 0.07 * b2 + 0.4;
            s.kernel_weight = kernel_weight(cfg, s.v, anchor);
            samples.push_back(s);
        }

    const double ridge = 1e-3;
    // build X^T Pi X + lambda*diag(0,1,1) and X^T Pi y by hand
    std::vector<std::vector<double>> ata(3, std::vector<double>(3, 0.0));
    std::vector<double> aty(3, 0.0);
    for (const PerturbedSample& s : samples) {
        const double x[3] = {1.0, static_cast<double>(s.v.bits[0]),
                             static_cast<double>(s.v.bits[1])};
        for (int r = 0; r < 3; ++r) {
            aty[r] += s.kernel_weight * x[r] * s.score;
            for (int c = 0; c < 3; ++c) ata[r][c] += s.kernel_weight * x[r] * x[c];
        }
    }
    ata[1][1] += ridge;
    ata[2][2] += ridge;
    const std::vector<double> expected = solve_dense(ata, aty);

    const LinearExplanation e = fit_local_linear(samples, ridge);
    CHECK(e.intercept == doctest::Approx(expected[0]).epsilon(1e-12));
    CHECK(e.weights[0] == doctest::Approx(expected[1]).epsilon(1e-12));
    CHECK(e.weights[1] == doctest::Approx(expected[2]).epsilon(1e-12));
    CHECK(e.residual == doctest::Approx(objective(samples, e.weights, e.intercept, 0.0)));
}

TEST_CASE("rank-deficient designs need ridge") {
    std::vector<PerturbedSample> samples = {
        {vec({1, 1}), 0.9, 1.0}, {vec({1, 1}), 0.9, 1.0}, {vec({1, 1}), 0.9, 1.0}};
    try {
        fit_local_linear(samples, 0.0);
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.code() == Errc::DegenerateDesign);
    }
    CHECK_NOTHROW(fit_local_linear(samples, 1e-3));
}

TEST_CASE("fit is order-invariant") {
    Rng rng(11);
    std::vector<PerturbedSample> samples;
    for (int j = 0; j < 40; ++j) {
        PerturbedSample s;
        for (int i = 0; i < 4; ++i) s.v.bits.push_back(rng.next_bernoulli(0.5));
        s.score = rng.next_unit();
        s.kernel_weight = 0.1 + rng.next_unit();
        samples.push_back(s);
    }
    const LinearExplanation a = fit_local_linear(samples, 1e-3);
    std::reverse(samples.begin(), samples.end());
    const LinearExplanation b = fit_local_linear(samples, 1e-3);
    for (std::size_t i = 0; i < 4; ++i) CHECK(std::fabs(a.weights[i] - b.weights[i]) < 1e-12);
    CHECK(std::fabs(a.intercept - b.intercept) < 1e-12);
}

TEST_CASE("larger ridge shrinks the weight norm") {
    Rng rng(12);
    std::vector<PerturbedSample> samples;
    for (int j = 0; j < 60; ++j) {
        PerturbedSample s;
        for (int i = 0; i < 5; ++i) s.v.bits.push_back(rng.next_bernoulli(0.5));
        s.score = rng.next_unit();
        s.kernel_weight = 0.1 + rng.next_unit();
        samples.push_back(s);
    }
    double prev = 1e300;
    for (double ridge : {1e-4, 1e-2, 1e0, 1e2}) {
        const LinearExplanation e = fit_local_linear(samples, ridge);
        double norm = 0.0;
        for (double w : e.weights) norm += w * w;
        CHECK(norm <= prev + 1e-15);
        prev = norm;
    }
}

TEST_CASE("the fitted point is a local optimum of the objective") {
    Rng rng(13);
    std::vector<PerturbedSample> samples;
    for (int j = 0; j < 50; ++j) {
        PerturbedSample s;
        for (int i = 0; i < 3; ++i) s.v.bits.push_back(rng.next_bernoulli(0.5));
        s.score = rng.next_unit();
        s.kernel_weight = 0.1 + rng.next_unit();
        samples.push_back(s);
    }
    const double ridge = 1e-3;
    const LinearExplanation e = fit_local_linear(samples, ridge);
    const double best = objective(samples, e.weights, e.intercept, ridge);
    for (std::size_t i = 0; i < e.weights.size(); ++i) {
        for (double delta : {1e-3, -1e-3}) {
            std::vector<double> w = e.weights;
            w[i] += delta;
            CHECK(objective(samples, w, e.intercept, ridge) >= best);
        }
    }
}

TEST_CASE("explain_instance finds a planted signature's pixel") {
    const std::size_t chunk = 64;
    Bytes file(16 * chunk, 0x20);
    Rng rng(21);
    for (auto& b : file) b = rng.next_byte();
    const Bytes sig = ascii("S1GN4TURE");
    const std::size_t pixel_k = 11;
    std::copy(sig.begin(), sig.end(), file.begin() + pixel_k * chunk + 5);

    det::PlantedSignatureDetector d(0.3, {{sig, 0.5}});
    const seg::SuperpixelMap map = seg::segment_by_offset(file.size(), chunk);

    // brute-force single-pixel occlusion confirms which pixel matters
    std::size_t oracle_argmax = 0;
    double oracle_best = -1.0;
    const double base = d.score(file);
    for (std::size_t i = 0; i < map.size(); ++i) {
        Bytes variant = file;
        seg::fill_region(variant, map.pixels[i].start, map.pixels[i].length, seg::ZeroFill{});
        const double drop = base - d.score(variant);
        if (drop > oracle_best) {
            oracle_best = drop;
            oracle_argmax = i;
        }
    }
    REQUIRE(oracle_argmax == pixel_k);

    const std::uint64_t before = d.queries();
    const LinearExplanation e =
        explain_instance(file, map, d, seg::ZeroFill{}, KernelConfig{}, 256, 1e-3, 99);
    CHECK(d.queries() - before == 256);

    std::size_t argmax = 0;
    for (std::size_t i = 1; i < e.weights.size(); ++i)
        if (std::fabs(e.weights[i]) > std::fabs(e.weights[argmax])) argmax = i;
    CHECK(argmax == pixel_k);
    for (std::size_t i = 0; i < e.weights.size(); ++i)
        if (i != pixel_k) CHECK(std::fabs(e.weights[i]) < std::fabs(e.weights[pixel_k]));
}

TEST_CASE("a detector that ignores its input gets a flat explanation") {
    Bytes file(1024, 0xab);
    det::PlantedSignatureDetector d(0.4, {});
    const seg::SuperpixelMap map = seg::segment_by_offset(file.size(), 128);
    const LinearExplanation e =
        explain_instance(file, map, d, seg::ZeroFill{}, KernelConfig{}, 128, 1e-3, 5);
    for (double w : e.weights) CHECK(std::fabs(w) < 1e-6);
    CHECK(e.intercept == doctest::Approx(0.4));
}

TEST_CASE("parallel scoring does not change the explanation") {
    Bytes file(2048, 0);
    Rng rng(31);
    for (auto& b : file) b = rng.next_byte();
    const Bytes sig = ascii("DEADBEEF");
    std::copy(sig.begin(), sig.end(), file.begin() + 700);
    det::PlantedSignatureDetector d(0.2, {{sig, 0.6}});
    const seg::SuperpixelMap map = seg::segment_by_offset(file.size(), 256);

    const LinearExplanation serial =
        explain_instance(file, map, d, seg::ZeroFill{}, KernelConfig{}, 200, 1e-3, 17, 1);
    const LinearExplanation parallel =
        explain_instance(file, map, d, seg::ZeroFill{}, KernelConfig{}, 200, 1e-3, 17, 4);
    CHECK(serial.weights == parallel.weights);
    CHECK(serial.intercept == parallel.intercept);

    try {
        explain_instance(Bytes{}, map, d, seg::ZeroFill{}, KernelConfig{}, 16, 1e-3, 0);
        CHECK(false);
    } catch (const Error& e) {
        CHECK(e.code() == Errc::EmptyFile);
    }
}

TEST_CASE("weight histogram buckets |w| and sums to one") {
    LinearExplanation e;
    e.weights = {0.0, 0.0, 0.0};
    auto h = weight_histogram(e, kDefaultHistogramBuckets);
    REQUIRE(h.size() == 4);
    CHECK(h[0] == doctest::Approx(1.0));

    e.weights = {0.005, -0.05, 0.15, -0.25};
    h = weight_histogram(e, kDefaultHistogramBuckets);
    for (double f : h) CHECK(f == doctest::Approx(0.25));

    // out-of-range magnitudes land in the boundary buckets
    e.weights = {3.5, -2.0, 0.005, 0.15};
    h = weight_histogram(e, kDefaultHistogramBuckets);
    CHECK(std::accumulate(h.begin(), h.end(), 0.0) == doctest::Approx(1.0));
    CHECK(h[3] == doctest::Approx(0.5));
}

TEST_CASE("section summary partitions the weights") {
    seg::SuperpixelMap map;
    map.file_length = 300;
    map.pixels = {{0, 100, ".text"}, {100, 100, ".text"}, {200, 100, ".data"}};
    LinearExplanation e;
    e.weights = {0.2, 0.3, 0.5};

    const auto summary = section_weight_summary(e, map);
    REQUIRE(summary.size() == 2);
    CHECK(summary.at(".text") == doctest::Approx(0.5));
    CHECK(summary.at(".data") == doctest::Approx(0.5));

    double total = 0.0;
    for (const auto& [name, w] : summary) total += w;
    CHECK(std::fabs(total - (0.2 + 0.3 + 0.5)) < 1e-12);

    map.pixels[1].label.reset();
    try {
        section_weight_summary(e, map);
        CHECK(false);
    } catch (const Error& err) {
        CHECK(err.code() == Errc::UnlabeledMap);
    }

    seg::SuperpixelMap single;
    single.file_length = 10;
    single.pixels = {{0, 10, ".only"}};
    LinearExplanation es;
    es.weights = {0.42};
    CHECK(section_weight_summary(es, single).at(".only") == doctest::Approx(0.42));
}

TEST_CASE("adversarial mining returns extreme pixels verbatim") {
    seg::SuperpixelMap map;
    map.file_length = 12;
    map.pixels = {{0, 4, std::nullopt}, {4, 4, std::nullopt}, {8, 4, std::nullopt}};
    const Bytes bytes = ascii("AAAABBBBCCCC");

    LinearExplanation e;
    e.weights = {0.1, -0.4, 0.3};
    ExplainedInstance inst{e, map, bytes};

    const auto mined = mine_adversarial_data({inst}, 0.2);
    REQUIRE(mined.size() == 2);
    bool saw_benign = false, saw_malware = false;
    for (const AdversarialPattern& p : mined) {
        if (p.weight < 0) {
            CHECK(p.data == ascii("BBBB"));
            saw_benign = true;
        } else {
            CHECK(p.data == ascii("CCCC"));
            saw_malware = true;
        }
    }
    CHECK(saw_benign);
    CHECK(saw_malware);

    LinearExplanation flat;
    flat.weights = {0.1, -0.1, 0.05};
    CHECK(mine_adversarial_data({{flat, map, bytes}}, 0.2).empty());
}

TEST_CASE("mining recovers a benign-pushing pattern from a detector") {
    const std::size_t chunk = 32;
    Bytes file(8 * chunk, 0x11);
    const Bytes marker = ascii("HARMLESS");
    std::copy(marker.begin(), marker.end(), file.begin() + 3 * chunk);

    // the marker pulls the score down; occluding it pushes the score up
    det::PlantedSignatureDetector d(0.9, {{marker, -0.45}});
    const seg::SuperpixelMap map = seg::segment_by_offset(file.size(), chunk);
    const LinearExplanation e =
        explain_instance(file, map, d, seg::ZeroFill{}, KernelConfig{}, 256, 1e-3, 3);

    const auto mined = mine_adversarial_data({{e, map, file}}, 0.2);
    REQUIRE(mined.size() == 1);
    CHECK(mined[0].weight < 0.0);
    const Bytes expected(file.begin() + 3 * chunk, file.begin() + 4 * chunk);
    CHECK(mined[0].data == expected);
}
