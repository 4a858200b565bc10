#include "bytesleuth/detector.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <csignal>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <unordered_map>

#include <poll.h>
#include <sys/wait.h>
#include <unistd.h>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "bytesleuth/formats.hpp"

namespace bytesleuth::det {

namespace {

double logistic(double z) {
    if (z > 30.0) z = 30.0;
    if (z < -30.0) z = -30.0;
    return 1.0 / (1.0 + std::exp(-z));
}

constexpr std::size_t kScanBlock = 64 * 1024;  // positions per parallel block

}  // namespace

struct NgramDetector::Index {
    std::unordered_map<std::string_view, std::uint32_t> lookup;
};

NgramDetector::NgramDetector(NgramModel model, double threshold, std::size_t input_cap)
    : Detector(threshold, true), model_(std::move(model)), input_cap_(input_cap) {
    if (model_.n == 0) fail(Errc::InvariantViolation, "gram order must be at least 1");
    std::sort(model_.weights.begin(), model_.weights.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    auto idx = std::make_shared<Index>();
    for (std::uint32_t i = 0; i < model_.weights.size(); ++i) {
        if (model_.weights[i].first.size() != model_.n)
            fail(Errc::InvariantViolation, "gram length does not match model order");
        idx->lookup.emplace(model_.weights[i].first, i);
    }
    index_ = std::move(idx);
}

std::vector<std::uint8_t> NgramDetector::presence_serial(ByteView b) const {
    std::vector<std::uint8_t> present(model_.weights.size(), 0);
    if (b.size() < model_.n || present.empty()) return present;
    const char* base = reinterpret_cast<const char*>(b.data());
    const std::size_t positions = b.size() - model_.n + 1;
    for (std::size_t pos = 0; pos < positions; ++pos) {
        auto it = index_->lookup.find(std::string_view(base + pos, model_.n));
        if (it != index_->lookup.end()) present[it->second] = 1;
    }
    return present;
}

std::vector<std::uint8_t> NgramDetector::presence_parallel(ByteView b, int jobs) const {
    std::vector<std::uint8_t> present(model_.weights.size(), 0);
    if (b.size() < model_.n || present.empty()) return present;
    const char* base = reinterpret_cast<const char*>(b.data());
    const std::size_t positions = b.size() - model_.n + 1;
    const std::size_t blocks = (positions + kScanBlock - 1) / kScanBlock;

    // per-block partial bitmaps, merged in block order: presence is a pure
    // OR so the merged result is identical to the serial scan for any
    // thread count
    std::vector<std::vector<std::uint8_t>> partial(blocks);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) num_threads(jobs)
#endif
    for (long long blk = 0; blk < static_cast<long long>(blocks); ++blk) {
        std::vector<std::uint8_t> local(model_.weights.size(), 0);
        const std::size_t lo = static_cast<std::size_t>(blk) * kScanBlock;
        const std::size_t hi = std::min(lo + kScanBlock, positions);
        for (std::size_t pos = lo; pos < hi; ++pos) {
            auto it = index_->lookup.find(std::string_view(base + pos, model_.n));
            if (it != index_->lookup.end()) local[it->second] = 1;
        }
        partial[blk] = std::move(local);
    }
    for (const auto& local : partial)
        for (std::size_t i = 0; i < local.size(); ++i)
            if (local[i]) present[i] = 1;
    return present;
}

double NgramDetector::do_score(ByteView b) const {
    if (b.size() > input_cap_) b = b.first(input_cap_);
    const std::vector<std::uint8_t> present =
        jobs_ > 1 ? presence_parallel(b, jobs_) : presence_serial(b);
    double z = model_.bias;
    for (std::size_t i = 0; i < present.size(); ++i)
        if (present[i]) z += model_.weights[i].second;
    return logistic(z);
}

PlantedSignatureDetector::PlantedSignatureDetector(double base_score,
                                                   std::vector<PlantedSignature> signatures,
                                                   double threshold, std::size_t input_cap)
    : Detector(threshold, true), base_score_(base_score), signatures_(std::move(signatures)),
      input_cap_(input_cap) {
    for (const PlantedSignature& s : signatures_)
        if (s.pattern.empty())
            fail(Errc::InvariantViolation, "planted signature pattern must be nonempty");
}

double PlantedSignatureDetector::do_score(ByteView b) const {
    if (b.size() > input_cap_) b = b.first(input_cap_);
    double s = base_score_;
    for (const PlantedSignature& sig : signatures_) {
        if (sig.pattern.size() > b.size()) continue;
        if (memmem(b.data(), b.size(), sig.pattern.data(), sig.pattern.size()) != nullptr)
            s += sig.weight;
    }
    return std::clamp(s, 0.0, 1.0);
}

NgramModel train_ngram(const std::vector<Bytes>& malware, const std::vector<Bytes>& benign,
                       std::size_t n, int epochs, double rate, std::uint64_t seed) {
    if (malware.empty() || benign.empty())
        fail(Errc::EmptyCorpus, "both corpora must be nonempty");
    if (n == 0) fail(Errc::InvariantViolation, "gram order must be at least 1");

    std::set<std::string> vocab;
    auto grams_of = [n](const Bytes& sample) {
        std::set<std::string> grams;
        if (sample.size() >= n) {
            const char* base = reinterpret_cast<const char*>(sample.data());
            for (std::size_t pos = 0; pos + n <= sample.size(); ++pos)
                grams.insert(std::string(base + pos, n));
        }
        return grams;
    };

    std::vector<std::set<std::string>> sample_grams;
    std::vector<double> labels;
    for (const Bytes& s : malware) {
        sample_grams.push_back(grams_of(s));
        labels.push_back(1.0);
    }
    for (const Bytes& s : benign) {
        sample_grams.push_back(grams_of(s));
        labels.push_back(0.0);
    }
    for (const auto& grams : sample_grams) vocab.insert(grams.begin(), grams.end());

    std::vector<std::string> grams(vocab.begin(), vocab.end());
    std::unordered_map<std::string_view, std::uint32_t> index;
    for (std::uint32_t i = 0; i < grams.size(); ++i) index.emplace(grams[i], i);

    std::vector<std::vector<std::uint32_t>> features(sample_grams.size());
    for (std::size_t s = 0; s < sample_grams.size(); ++s) {
        for (const std::string& g : sample_grams[s]) features[s].push_back(index.at(g));
        std::sort(features[s].begin(), features[s].end());
    }

    std::vector<double> w(grams.size(), 0.0);
    double bias = 0.0;
    Rng rng(sub_seed(seed, "train_ngram"));
    std::vector<std::size_t> order(features.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int e = 0; e < epochs; ++e) {
        for (std::size_t i = order.size(); i > 1; --i)
            std::swap(order[i - 1], order[rng.next_below(i)]);
        for (std::size_t s : order) {
            double z = bias;
            for (std::uint32_t f : features[s]) z += w[f];
            const double g = logistic(z) - labels[s];
            for (std::uint32_t f : features[s]) w[f] -= rate * g;
            bias -= rate * g;
        }
    }

    NgramModel model;
    model.n = n;
    model.bias = bias;
    for (std::size_t i = 0; i < grams.size(); ++i) model.weights.emplace_back(grams[i], w[i]);
    return model;
}

SubprocessDetector::SubprocessDetector(std::string command, double threshold, int timeout_ms)
    : Detector(threshold, false), command_(std::move(command)), timeout_ms_(timeout_ms) {}

SubprocessDetector::~SubprocessDetector() { shutdown(); }

void SubprocessDetector::spawn() const {
    int to_pipe[2], from_pipe[2];
    if (pipe(to_pipe) != 0) fail(Errc::RemoteUnavailable, "pipe: " + std::string(strerror(errno)));
    if (pipe(from_pipe) != 0) {
        close(to_pipe[0]);
        close(to_pipe[1]);
        fail(Errc::RemoteUnavailable, "pipe: " + std::string(strerror(errno)));
    }
    signal(SIGPIPE, SIG_IGN);
    const pid_t pid = fork();
    if (pid < 0) fail(Errc::RemoteUnavailable, "fork: " + std::string(strerror(errno)));
    if (pid == 0) {
        dup2(to_pipe[0], STDIN_FILENO);
        dup2(from_pipe[1], STDOUT_FILENO);
        close(to_pipe[0]);
        close(to_pipe[1]);
        close(from_pipe[0]);
        close(from_pipe[1]);
        execl("/bin/sh", "sh", "-c", command_.c_str(), static_cast<char*>(nullptr));
        _exit(127);
    }
    close(to_pipe[0]);
    close(from_pipe[1]);
    child_pid_ = pid;
    to_child_ = to_pipe[1];
    from_child_ = from_pipe[0];
}

void SubprocessDetector::shutdown() const {
    if (to_child_ >= 0) close(to_child_);
    if (from_child_ >= 0) close(from_child_);
    if (child_pid_ > 0) {
        int status = 0;
        if (waitpid(child_pid_, &status, WNOHANG) == 0) {
            kill(child_pid_, SIGKILL);
            waitpid(child_pid_, &status, 0);
        }
    }
    to_child_ = from_child_ = -1;
    child_pid_ = -1;
}

double SubprocessDetector::do_score(ByteView b) const {
    if (child_pid_ < 0) spawn();

    std::uint8_t header[8];
    const std::uint64_t len = b.size();
    for (int i = 0; i < 8; ++i) header[i] = static_cast<std::uint8_t>(len >> (8 * i));

    auto write_all = [this](const std::uint8_t* data, std::size_t count) {
        while (count > 0) {
            const ssize_t n = write(to_child_, data, count);
            if (n < 0) {
                if (errno == EINTR) continue;
                shutdown();
                fail(Errc::RemoteUnavailable, "write to scorer: " + std::string(strerror(errno)));
            }
            data += n;
            count -= static_cast<std::size_t>(n);
        }
    };
    write_all(header, sizeof header);
    if (!b.empty()) write_all(b.data(), b.size());

    std::string reply;
    for (;;) {
        pollfd pfd{from_child_, POLLIN, 0};
        const int rc = poll(&pfd, 1, timeout_ms_);
        if (rc == 0) {
            shutdown();
            fail(Errc::Timeout, "scorer reply timed out after " + std::to_string(timeout_ms_) +
                                    " ms");
        }
        if (rc < 0) {
            if (errno == EINTR) continue;
            shutdown();
            fail(Errc::RemoteUnavailable, "poll: " + std::string(strerror(errno)));
        }
        char buf[256];
        const ssize_t n = read(from_child_, buf, sizeof buf);
        if (n < 0) {
            if (errno == EINTR) continue;
            shutdown();
            fail(Errc::RemoteUnavailable, "read from scorer: " + std::string(strerror(errno)));
        }
        if (n == 0) {
            shutdown();
            fail(Errc::RemoteUnavailable, "scorer closed its output");
        }
        reply.append(buf, static_cast<std::size_t>(n));
        if (reply.find('\n') != std::string::npos) break;
        if (reply.size() > 4096) {
            shutdown();
            fail(Errc::MalformedReply, "reply exceeds 4096 bytes without newline");
        }
    }

    const std::string line = reply.substr(0, reply.find('\n'));
    char* endp = nullptr;
    errno = 0;
    const double s = strtod(line.c_str(), &endp);
    while (endp && (*endp == ' ' || *endp == '\r' || *endp == '\t')) ++endp;
    if (errno != 0 || endp == line.c_str() || (endp && *endp != '\0'))
        fail(Errc::MalformedReply, "not a decimal score: \"" + line + "\"");
    if (!(s >= 0.0 && s <= 1.0))
        fail(Errc::MalformedReply, "score " + line + " outside [0,1]");
    return s;
}

CachingDetector::CachingDetector(std::unique_ptr<Detector> inner, std::string cache_dir)
    : Detector(inner->threshold(), false), inner_(std::move(inner)),
      cache_dir_(std::move(cache_dir)) {
    std::error_code ec;
    std::filesystem::create_directories(cache_dir_, ec);
}

double CachingDetector::do_score(ByteView b) const {
    char name[64];
    std::snprintf(name, sizeof name, "%016llx-%zu.score",
                  static_cast<unsigned long long>(fnv1a64(b)), b.size());
    const std::filesystem::path path = std::filesystem::path(cache_dir_) / name;

    std::ifstream in(path);
    if (in) {
        double s = 0.0;
        if (in >> s) return s;
    }
    const double s = inner_->score(b);
    std::ofstream out(path);
    char text[64];
    std::snprintf(text, sizeof text, "%.17g\n", s);
    out << text;
    return s;
}

std::unique_ptr<Detector> make_detector(const std::string& spec) {
    std::string body = spec;
    std::optional<double> threshold;
    const std::size_t at = body.rfind('@');
    if (at != std::string::npos && at + 1 < body.size()) {
        const std::string tail = body.substr(at + 1);
        char* endp = nullptr;
        const double t = strtod(tail.c_str(), &endp);
        if (endp && *endp == '\0') {
            threshold = t;
            body = body.substr(0, at);
        }
    }

    std::unique_ptr<Detector> d;
    if (body.rfind("builtin:ngram:", 0) == 0) {
        d = std::make_unique<NgramDetector>(fmt::load_ngram_model(body.substr(14)));
    } else if (body.rfind("builtin:planted:", 0) == 0) {
        fmt::PlantedSpec ps = fmt::load_planted_spec(body.substr(16));
        d = std::make_unique<PlantedSignatureDetector>(ps.base_score, std::move(ps.signatures));
    } else if (body.rfind("proc:", 0) == 0) {
        d = std::make_unique<SubprocessDetector>(body.substr(5));
    } else if (body.rfind("http:", 0) == 0) {
        std::string url = body.substr(5);
        if (url.rfind("//", 0) == 0) url = "http:" + url;
        if (url.find("://") == std::string::npos) url = "http://" + url;
        d = std::make_unique<HttpDetector>(url);
    } else {
        fail(Errc::BadArguments, "unknown detector spec \"" + spec + "\"");
    }
    if (threshold) d->set_threshold(*threshold);
    return d;
}

}  // namespace bytesleuth::det
