#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstring>
#include <functional>

#include "bytesleuth/pe.hpp"
#include "bytesleuth/segmentation.hpp"

using namespace bytesleuth;
using namespace bytesleuth::seg;

namespace {

Errc code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    REQUIRE(false);
    return Errc::IoError;
}

pe::SectionRecord section(const char* name, std::uint32_t raw_offset, std::uint32_t raw_size) {
    pe::SectionRecord s;
    std::memcpy(s.name.data(), name, std::strlen(name));
    s.raw_offset = raw_offset;
    s.raw_size = raw_size;
    s.virtual_address = raw_offset;
    s.virtual_size = raw_size;
    s.body.assign(raw_size, 0);
    return s;
}

}  // namespace

TEST_CASE("segment_by_offset splits into fixed chunks") {
    // a 200 KB file divided into ten 20 KB parts
    const SuperpixelMap m = segment_by_offset(204800, 20480);
    REQUIRE(m.size() == 10);
    for (std::size_t i = 0; i < 10; ++i) {
        CHECK(m.pixels[i].start == i * 20480);
        CHECK(m.pixels[i].length == 20480);
    }
    CHECK(m.file_length == 204800);

    const SuperpixelMap single = segment_by_offset(1000, 1024);
    REQUIRE(single.size() == 1);
    CHECK(single.pixels[0].length == 1000);

    const SuperpixelMap rem = segment_by_offset(1025, 1024);
    REQUIRE(rem.size() == 2);
    CHECK(rem.pixels[0].length == 1024);
    CHECK(rem.pixels[1].start == 1024);
    CHECK(rem.pixels[1].length == 1);

    CHECK(code_of([] { segment_by_offset(0, 1024); }) == Errc::EmptyFile);
}

TEST_CASE("segment_by_offset lengths always sum to the file length") {
    for (std::size_t len : {1u, 5u, 1023u, 1024u, 1025u, 70000u})
        for (std::size_t chunk : {1u, 7u, 1024u}) {
            const SuperpixelMap m = segment_by_offset(len, chunk);
            std::size_t total = 0;
            for (const Superpixel& p : m.pixels) {
                CHECK(p.length >= 1);
                total += p.length;
            }
            CHECK(total == len);
        }
}

TEST_CASE("segment_by_sections chunks each section under its own label") {
    pe::PeImage img;
    img.sections.push_back(section(".text", 0x400, 0x400));
    img.sections.push_back(section(".data", 0x800, 0x600));
    img.sections.push_back(section(".rsrc", 0xe00, 0x200));

    const SuperpixelMap m = segment_by_sections(img, 0x400);
    REQUIRE(m.size() == 4);  // 1 + 2 + 1
    CHECK(m.pixels[0].label == ".text");
    CHECK(m.pixels[1].label == ".data");
    CHECK(m.pixels[2].label == ".data");
    CHECK(m.pixels[3].label == ".rsrc");
    CHECK(m.pixels[1].length == 0x400);
    CHECK(m.pixels[2].length == 0x200);
}

TEST_CASE("segment_by_sections covers exactly the section raw ranges") {
    const pe::PeImage img = pe::parse_pe(pe::make_minimal_pe(6));
    const SuperpixelMap m = segment_by_sections(img, 256);

    std::vector<bool> covered(img.serialized_size(), false);
    for (const Superpixel& p : m.pixels) {
        const pe::SectionRecord* s = img.section_containing_offset(p.start);
        REQUIRE(s != nullptr);
        CHECK(p.label == s->name_str());
        for (std::size_t i = p.start; i < p.start + p.length; ++i) covered[i] = true;
    }
    for (const pe::SectionRecord& s : img.sections)
        for (std::size_t i = s.raw_offset; i < s.raw_offset + s.raw_size; ++i)
            CHECK(covered[i]);
    // headers stay out of the map
    for (std::size_t i = 0; i < img.sections[0].raw_offset; ++i) CHECK(!covered[i]);
}

TEST_CASE("segment_from_listing keeps the listed block extents") {
    const std::vector<BlockRecord> blocks = {
        {0x75, 0x25}, {0x9a, 0x07}, {0xa1, 0x08}};
    const SuperpixelMap m = segment_from_listing(blocks, 0x200);
    REQUIRE(m.size() == 3);
    CHECK(m.pixels[0].start == 0x75);
    CHECK(m.pixels[0].length == 0x25);
    CHECK(m.pixels[1].start == 0x9a);
    CHECK(m.pixels[1].length == 0x07);
    CHECK(m.pixels[2].start == 0xa1);
    CHECK(m.pixels[2].length == 0x08);

    CHECK(segment_from_listing({}, 0x200).size() == 0);

    CHECK(code_of([] {
              segment_from_listing({{0x10, 0x10}, {0x1f, 0x02}}, 0x100);
          }) == Errc::OverlappingBlocks);
    CHECK(code_of([] { segment_from_listing({{0xf0, 0x20}}, 0x100); }) == Errc::OutOfBounds);
}

TEST_CASE("mask_to_bytes follows the two-pixel reference example") {
    const Bytes file = {0x11, 0x22};
    SuperpixelMap m;
    m.file_length = 2;
    m.pixels = {{0, 1, std::nullopt}, {1, 1, std::nullopt}};

    InterpretableVector v;
    v.bits = {0, 1};
    CHECK(mask_to_bytes(file, m, v, ZeroFill{}) == Bytes{0x00, 0x22});

    v.bits = {1, 1};
    CHECK(mask_to_bytes(file, m, v, ZeroFill{}) == file);

    v.bits = {0, 0};
    CHECK(mask_to_bytes(file, m, v, ZeroFill{}) == Bytes{0x00, 0x00});
}

TEST_CASE("mask_to_bytes keeps non-pixel bytes and the length") {
    const Bytes file = {0xaa, 0xbb, 0xcc, 0xdd, 0xee};
    SuperpixelMap m;
    m.file_length = 5;
    m.pixels = {{1, 2, std::nullopt}};  // bytes 0, 3, 4 are outside every pixel

    InterpretableVector v;
    v.bits = {0};
    for (const OcclusionPolicy& policy :
         {OcclusionPolicy{ZeroFill{}}, OcclusionPolicy{RandomFill{9}},
          OcclusionPolicy{AdversarialFill{{0x41, 0x42}}}}) {
        const Bytes out = mask_to_bytes(file, m, v, policy);
        REQUIRE(out.size() == file.size());
        CHECK(out[0] == 0xaa);
        CHECK(out[3] == 0xdd);
        CHECK(out[4] == 0xee);

        // all-ones stays the identity under every policy
        InterpretableVector ones = InterpretableVector::ones(1);
        CHECK(mask_to_bytes(file, m, ones, policy) == file);
    }
}

TEST_CASE("mask_to_bytes validates lengths") {
    const Bytes file = {1, 2, 3};
    SuperpixelMap m;
    m.file_length = 3;
    m.pixels = {{0, 3, std::nullopt}};
    InterpretableVector v;
    v.bits = {1, 0};
    CHECK(code_of([&] { mask_to_bytes(file, m, v, ZeroFill{}); }) == Errc::LengthMismatch);

    v.bits = {1};
    CHECK(code_of([&] {
              const Bytes wrong = {1, 2};
              mask_to_bytes(wrong, m, v, ZeroFill{});
          }) == Errc::LengthMismatch);
}

TEST_CASE("random fill is a pure function of the seed") {
    const Bytes file(64, 0x7f);
    SuperpixelMap m;
    m.file_length = 64;
    m.pixels = {{0, 32, std::nullopt}, {32, 32, std::nullopt}};
    InterpretableVector v;
    v.bits = {0, 0};

    const Bytes a = mask_to_bytes(file, m, v, RandomFill{42});
    const Bytes b = mask_to_bytes(file, m, v, RandomFill{42});
    const Bytes c = mask_to_bytes(file, m, v, RandomFill{43});
    CHECK(a == b);
    CHECK(a != c);
    CHECK(a != file);
}

TEST_CASE("adversarial fill repeats the pattern from the range start") {
    Bytes buf(7, 0xff);
    fill_region(buf, 1, 5, AdversarialFill{{0x41, 0x42}});
    CHECK(buf == Bytes{0xff, 0x41, 0x42, 0x41, 0x42, 0x41, 0xff});

    Bytes buf2(4, 0x00);
    CHECK(code_of([&] { fill_region(buf2, 2, 3, ZeroFill{}); }) == Errc::OutOfBounds);
    CHECK(code_of([&] {
              Bytes b3(4, 0);
              fill_region(b3, 0, 2, AdversarialFill{{}});
          }) == Errc::InvariantViolation);
}
