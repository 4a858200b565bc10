#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace bytesleuth {

using Bytes = std::vector<std::uint8_t>;
using ByteView = std::span<const std::uint8_t>;

struct ByteRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    std::size_t length() const { return end - begin; }
    bool contains(std::size_t off) const { return off >= begin && off < end; }
    bool overlaps(const ByteRange& o) const { return begin < o.end && o.begin < end; }
    bool operator==(const ByteRange&) const = default;
};

enum class Errc {
    // pe
    MissingMzMagic,
    MissingPeSignature,
    TruncatedHeader,
    OverlappingSections,
    NotPe32,
    InvariantViolation,
    SectionTableFull,
    RvaOutOfRange,
    Unmapped,
    // segmentation
    EmptyFile,
    OverlappingBlocks,
    OutOfBounds,
    LengthMismatch,
    // detector
    RemoteUnavailable,
    MalformedReply,
    Timeout,
    EmptyCorpus,
    // explain
    DegenerateDesign,
    UnlabeledMap,
    // fastlsm
    EmptyInput,
    // transform
    DisplacementOverflow,
    RangeTooSmall,
    NotExecutableSection,
    RelocationsPresent,
    StructuralRange,
    // verifier
    OverlapFault,
    UnknownOpcode,
    StepLimitExceeded,
    WriteFault,
    // attack
    NoPositiveWeights,
    UnsupportedBinary,
    // io / cli
    IoError,
    BadArguments,
};

const char* errc_name(Errc c);

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& msg)
        : std::runtime_error(std::string(errc_name(code)) + ": " + msg), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& msg) { throw Error(code, msg); }

// 64-bit FNV-1a, used for input digests and seed derivation tags.
inline std::uint64_t fnv1a64(ByteView data, std::uint64_t seed = 0xcbf29ce484222325ull) {
    std::uint64_t h = seed;
    for (std::uint8_t b : data) {
        h ^= b;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::uint64_t fnv1a64(std::string_view s, std::uint64_t seed = 0xcbf29ce484222325ull) {
    return fnv1a64(ByteView(reinterpret_cast<const std::uint8_t*>(s.data()), s.size()), seed);
}

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// Fixed seed-splitting rule: every module derives its own stream from the one
// root seed through (tag, index) so runs are reproducible end to end.
inline std::uint64_t sub_seed(std::uint64_t root, std::string_view tag, std::uint64_t index = 0) {
    return splitmix64(splitmix64(root ^ fnv1a64(tag)) + index);
}

// mt19937_64 is fully specified by the standard, so every draw below is
// bit-reproducible across platforms. Distributions are hand-rolled because
// std::*_distribution is implementation-defined.
class Rng {
public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    std::uint64_t next_u64() { return eng_(); }

    // uniform in [0,1) with 53 bits
    double next_unit() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

    bool next_bernoulli(double p) { return next_unit() < p; }

    std::uint8_t next_byte() { return static_cast<std::uint8_t>(eng_() & 0xff); }

    // uniform in [0, n), rejection sampled
    std::uint64_t next_below(std::uint64_t n) {
        if (n == 0) return 0;
        const std::uint64_t limit = std::uint64_t(-1) - std::uint64_t(-1) % n;
        std::uint64_t v;
        do {
            v = eng_();
        } while (v >= limit);
        return v % n;
    }

private:
    std::mt19937_64 eng_;
};

}  // namespace bytesleuth
