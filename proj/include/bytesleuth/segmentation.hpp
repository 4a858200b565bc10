#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "bytesleuth/common.hpp"
#include "bytesleuth/pe.hpp"

namespace bytesleuth::seg {

struct Superpixel {
    std::size_t start = 0;
    std::size_t length = 0;
    std::optional<std::string> label;

    ByteRange range() const { return {start, start + length}; }
    bool operator==(const Superpixel&) const = default;
};

struct SuperpixelMap {
    std::vector<Superpixel> pixels;
    std::size_t file_length = 0;

    std::size_t size() const { return pixels.size(); }
    bool operator==(const SuperpixelMap&) const = default;
};

// {0,1}^l presence vector over a SuperpixelMap: bit i == 1 keeps pixel i,
// bit i == 0 occludes it.
struct InterpretableVector {
    std::vector<std::uint8_t> bits;

    static InterpretableVector ones(std::size_t l) {
        InterpretableVector v;
        v.bits.assign(l, 1);
        return v;
    }
    std::size_t size() const { return bits.size(); }
    bool operator==(const InterpretableVector&) const = default;
};

struct ZeroFill {
    bool operator==(const ZeroFill&) const = default;
};
struct RandomFill {
    std::uint64_t seed = 0;
    bool operator==(const RandomFill&) const = default;
};
struct AdversarialFill {
    Bytes pattern;  // repeated across the occluded range; must be nonempty
    bool operator==(const AdversarialFill&) const = default;
};
using OcclusionPolicy = std::variant<ZeroFill, RandomFill, AdversarialFill>;

inline constexpr std::size_t kDefaultChunk = 1024;

SuperpixelMap segment_by_offset(std::size_t file_length, std::size_t chunk);
SuperpixelMap segment_by_sections(const pe::PeImage& image, std::size_t chunk);

struct BlockRecord {
    std::size_t start = 0;
    std::size_t length = 0;
    bool operator==(const BlockRecord&) const = default;
};
SuperpixelMap segment_from_listing(const std::vector<BlockRecord>& blocks,
                                   std::size_t file_length);

// Overwrites buf[start, start+length) per policy. Random fill is seeded from
// (policy seed, range start), so the same range always gets the same bytes
// regardless of what else was occluded.
void fill_region(Bytes& buf, std::size_t start, std::size_t length, const OcclusionPolicy& policy);

Bytes mask_to_bytes(ByteView original, const SuperpixelMap& map, const InterpretableVector& v,
                    const OcclusionPolicy& policy);

}  // namespace bytesleuth::seg
