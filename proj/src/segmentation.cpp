#include "bytesleuth/segmentation.hpp"

#include <algorithm>

namespace bytesleuth::seg {

SuperpixelMap segment_by_offset(std::size_t file_length, std::size_t chunk) {
    if (file_length == 0) fail(Errc::EmptyFile, "cannot segment an empty file");
    if (chunk == 0) fail(Errc::InvariantViolation, "chunk size must be at least 1");

    SuperpixelMap map;
    map.file_length = file_length;
    for (std::size_t off = 0; off < file_length; off += chunk)
        map.pixels.push_back({off, std::min(chunk, file_length - off), std::nullopt});
    return map;
}

SuperpixelMap segment_by_sections(const pe::PeImage& image, std::size_t chunk) {
    if (chunk == 0) fail(Errc::InvariantViolation, "chunk size must be at least 1");

    SuperpixelMap map;
    map.file_length = image.serialized_size();
    for (const pe::SectionRecord& s : image.sections) {
        if (s.raw_size == 0) continue;
        const std::string label = s.name_str();
        for (std::size_t off = 0; off < s.raw_size; off += chunk) {
            map.pixels.push_back({s.raw_offset + off,
                                  std::min(chunk, static_cast<std::size_t>(s.raw_size) - off),
                                  label});
        }
    }
    std::sort(map.pixels.begin(), map.pixels.end(),
              [](const Superpixel& a, const Superpixel& b) { return a.start < b.start; });
    return map;
}

SuperpixelMap segment_from_listing(const std::vector<BlockRecord>& blocks,
                                   std::size_t file_length) {
    SuperpixelMap map;
    map.file_length = file_length;
    for (const BlockRecord& b : blocks) {
        if (b.length == 0) fail(Errc::InvariantViolation, "listing block with zero length");
        if (b.start + b.length > file_length)
            fail(Errc::OutOfBounds, "listing block at " + std::to_string(b.start) +
                                        " extends past end of file");
        map.pixels.push_back({b.start, b.length, std::nullopt});
    }
    std::sort(map.pixels.begin(), map.pixels.end(),
              [](const Superpixel& a, const Superpixel& b) { return a.start < b.start; });
    for (std::size_t i = 1; i < map.pixels.size(); ++i) {
        if (map.pixels[i - 1].range().overlaps(map.pixels[i].range()))
            fail(Errc::OverlappingBlocks,
                 "listing blocks at " + std::to_string(map.pixels[i - 1].start) + " and " +
                     std::to_string(map.pixels[i].start) + " share bytes");
    }
    return map;
}

void fill_region(Bytes& buf, std::size_t start, std::size_t length, const OcclusionPolicy& policy) {
    if (start + length > buf.size())
        fail(Errc::OutOfBounds, "fill range past end of buffer");
    if (const auto* adv = std::get_if<AdversarialFill>(&policy)) {
        if (adv->pattern.empty())
            fail(Errc::InvariantViolation, "adversarial fill pattern must be nonempty");
        for (std::size_t i = 0; i < length; ++i)
            buf[start + i] = adv->pattern[i % adv->pattern.size()];
    } else if (const auto* rnd = std::get_if<RandomFill>(&policy)) {
        Rng rng(sub_seed(rnd->seed, "fill", start));
        for (std::size_t i = 0; i < length; ++i) buf[start + i] = rng.next_byte();
    } else {
        std::fill(buf.begin() + static_cast<long>(start),
                  buf.begin() + static_cast<long>(start + length), std::uint8_t{0});
    }
}

Bytes mask_to_bytes(ByteView original, const SuperpixelMap& map, const InterpretableVector& v,
                    const OcclusionPolicy& policy) {
    if (v.size() != map.pixels.size())
        fail(Errc::LengthMismatch, "vector has " + std::to_string(v.size()) + " bits for " +
                                       std::to_string(map.pixels.size()) + " pixels");
    if (original.size() != map.file_length)
        fail(Errc::LengthMismatch, "map built for length " + std::to_string(map.file_length) +
                                       ", input is " + std::to_string(original.size()));

    Bytes out(original.begin(), original.end());
    for (std::size_t i = 0; i < map.pixels.size(); ++i) {
        if (v.bits[i]) continue;
        const Superpixel& p = map.pixels[i];
        fill_region(out, p.start, p.length, policy);
    }
    return out;
}

}  // namespace bytesleuth::seg
