#pragma once

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "bytesleuth/common.hpp"

namespace bytesleuth::det {

inline constexpr std::size_t kDefaultInputCap = 2 * 1024 * 1024;
inline constexpr double kDefaultThreshold = 0.5;

// Black-box detector contract: bytes in, score in [0,1] out. classify() is
// threshold-consistent by construction. The query counter is atomic so
// concurrent scorers keep exact accounting.
class Detector {
public:
    virtual ~Detector() = default;

    double score(ByteView b) const {
        queries_.fetch_add(1, std::memory_order_relaxed);
        return do_score(b);
    }
    bool classify(ByteView b) const { return score(b) >= threshold_; }

    double threshold() const { return threshold_; }
    void set_threshold(double t) { threshold_ = t; }
    bool concurrent_safe() const { return concurrent_safe_; }
    std::uint64_t queries() const { return queries_.load(std::memory_order_relaxed); }

protected:
    Detector(double threshold, bool concurrent_safe)
        : threshold_(threshold), concurrent_safe_(concurrent_safe) {}
    virtual double do_score(ByteView b) const = 0;

private:
    double threshold_;
    bool concurrent_safe_;
    mutable std::atomic<std::uint64_t> queries_{0};
};

// Logistic model over byte-gram presence bits. Grams are stored as raw-byte
// strings, kept sorted so score accumulation order is fixed.
struct NgramModel {
    std::size_t n = 4;
    double bias = 0.0;
    std::vector<std::pair<std::string, double>> weights;  // sorted by gram
};

class NgramDetector : public Detector {
public:
    explicit NgramDetector(NgramModel model, double threshold = kDefaultThreshold,
                           std::size_t input_cap = kDefaultInputCap);

    const NgramModel& model() const { return model_; }
    void set_jobs(int jobs) { jobs_ = jobs < 1 ? 1 : jobs; }

    // presence bitmap over the model's grams; parallel variant partitions the
    // scan into fixed-size blocks so the result is thread-count independent
    std::vector<std::uint8_t> presence_serial(ByteView b) const;
    std::vector<std::uint8_t> presence_parallel(ByteView b, int jobs) const;

protected:
    double do_score(ByteView b) const override;

private:
    struct Index;
    NgramModel model_;
    std::size_t input_cap_;
    int jobs_ = 1;
    std::shared_ptr<const Index> index_;
};

struct PlantedSignature {
    Bytes pattern;
    double weight = 0.0;
};

// Synthetic ground-truth detector: clamp(base + sum of weights of patterns
// present as substrings, 0, 1).
class PlantedSignatureDetector : public Detector {
public:
    PlantedSignatureDetector(double base_score, std::vector<PlantedSignature> signatures,
                             double threshold = kDefaultThreshold,
                             std::size_t input_cap = kDefaultInputCap);

    double base_score() const { return base_score_; }
    const std::vector<PlantedSignature>& signatures() const { return signatures_; }

protected:
    double do_score(ByteView b) const override;

private:
    double base_score_;
    std::vector<PlantedSignature> signatures_;
    std::size_t input_cap_;
};

NgramModel train_ngram(const std::vector<Bytes>& malware, const std::vector<Bytes>& benign,
                       std::size_t n, int epochs, double rate, std::uint64_t seed);

// Child process scored over pipes: 8-byte little-endian payload length, then
// the payload, on stdin; one ASCII decimal in [0,1] plus newline on stdout.
class SubprocessDetector : public Detector {
public:
    explicit SubprocessDetector(std::string command, double threshold = kDefaultThreshold,
                                int timeout_ms = 10000);
    ~SubprocessDetector() override;

    SubprocessDetector(const SubprocessDetector&) = delete;
    SubprocessDetector& operator=(const SubprocessDetector&) = delete;

protected:
    double do_score(ByteView b) const override;

private:
    void spawn() const;
    void shutdown() const;

    std::string command_;
    int timeout_ms_;
    mutable int child_pid_ = -1;
    mutable int to_child_ = -1;
    mutable int from_child_ = -1;
};

// POST /score with the raw bytes; reply is a JSON object with one numeric
// "score" field.
class HttpDetector : public Detector {
public:
    explicit HttpDetector(std::string base_url, double threshold = kDefaultThreshold,
                          int timeout_ms = 10000);
    ~HttpDetector() override;

protected:
    double do_score(ByteView b) const override;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

// Optional score memoization keyed by input digest; used when the
// BYTESLEUTH_CACHE directory is configured. Keeps its own query counter so
// attack accounting still sees one query per score call.
class CachingDetector : public Detector {
public:
    CachingDetector(std::unique_ptr<Detector> inner, std::string cache_dir);

protected:
    double do_score(ByteView b) const override;

private:
    std::unique_ptr<Detector> inner_;
    std::string cache_dir_;
};

// Detector spec grammar: builtin:ngram:<model-file>, builtin:planted:<spec-file>,
// proc:<command-line>, http:<url>; optional @<threshold> suffix.
std::unique_ptr<Detector> make_detector(const std::string& spec);

}  // namespace bytesleuth::det
