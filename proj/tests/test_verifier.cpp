#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <functional>

#include "bytesleuth/transform.hpp"
#include "bytesleuth/verifier.hpp"

using namespace bytesleuth;
using namespace bytesleuth::vf;
using bytesleuth::tf::plan_append;
using bytesleuth::tf::plan_datadisp;
using bytesleuth::tf::plan_disp;

namespace {

pe::PeImage fixture(std::uint64_t seed = 0) { return pe::parse_pe(pe::make_minimal_pe(seed)); }

ByteRange range_in(const pe::PeImage& img, const char* name, std::size_t inset,
                   std::size_t length) {
    for (const pe::SectionRecord& s : img.sections)
        if (s.name_str() == name)
            return {s.raw_offset + inset, s.raw_offset + inset + length};
    REQUIRE(false);
    return {};
}

Errc code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    REQUIRE(false);
    return Errc::IoError;
}

// A synthetic address space, independent of any PE fixture: code at
// 0x401000 (entry byte is a plain prologue push), data at 0x402000,
// stub space at 0x403000.
MemoryMap synthetic_map() {
    MemoryMap map;
    map.base = 0x400000;

    MemoryRegion text;
    text.va_begin = 0x401000;
    text.va_end = 0x402000;
    text.data.assign(0x1000, 0x55);
    text.name = ".text";
    map.regions.push_back(std::move(text));

    MemoryRegion data;
    data.va_begin = 0x402000;
    data.va_end = 0x403000;
    data.data.assign(0x1000, 0x00);
    data.name = ".data";
    map.regions.push_back(std::move(data));

    MemoryRegion stub;
    stub.va_begin = 0x403000;
    stub.va_end = 0x404000;
    stub.data.assign(0x1000, 0xcc);
    stub.name = ".bsx0";
    map.regions.push_back(std::move(stub));
    return map;
}

void place(MemoryMap& map, std::uint32_t va, const Bytes& bytes) {
    MemoryRegion* r = map.region_of(va);
    REQUIRE(r != nullptr);
    for (std::size_t i = 0; i < bytes.size(); ++i) r->data[va - r->va_begin + i] = bytes[i];
}

}  // namespace

TEST_CASE("memory map exposes headers and zero-fills virtual tails") {
    pe::PeImage img = fixture(0);
    // stretch the last section so its virtual extent outruns its raw bytes
    img.sections.back().virtual_size = img.sections.back().raw_size + 0xe00;

    const MemoryMap map = build_memory_map(img);
    const std::uint32_t base = img.optional.image_base;

    CHECK(map.read(base + 0) == 0x4d);  // 'M'
    CHECK(map.read(base + 1) == 0x5a);  // 'Z'
    const MemoryRegion* hdr = map.region_of(base);
    REQUIRE(hdr != nullptr);
    CHECK(hdr->name.empty());

    const pe::SectionRecord& last = img.sections.back();
    const std::uint32_t tail = base + last.virtual_address + last.raw_size;
    for (std::uint32_t off = 0; off < 0xe00; off += 0x101) CHECK(map.read(tail + off) == 0x00);

    // a byte below the image base and one far past the last section both fault
    CHECK(!map.mapped(base - 1));
    CHECK(code_of([&] { map.read(base - 1); }) == Errc::Unmapped);
    CHECK(code_of([&] { map.read(base + 0x10000000); }) == Errc::Unmapped);

    // section contents are the raw bytes
    const pe::SectionRecord& text = img.sections[0];
    for (std::uint32_t i = 0; i < 16; ++i)
        CHECK(map.read(base + text.virtual_address + i) == text.body[i]);
}

TEST_CASE("overlapping virtual ranges are rejected") {
    pe::PeImage img = fixture(1);
    img.sections[1].virtual_address = img.sections[0].virtual_address + 1;
    CHECK(code_of([&] { build_memory_map(img); }) == Errc::OverlapFault);
}

TEST_CASE("a single jump stub exits without writing") {
    MemoryMap map = synthetic_map();
    // jmp 0x401000 from 0x403000: rel = 0x401000 - 0x403005 = -0x2005
    place(map, 0x403000, {0xe9, 0xfb, 0xdf, 0xff, 0xff});

    const StubRun run = interpret_stub(map, 0x403000, 16);
    CHECK(run.exit_va == 0x401000);
    CHECK(run.bytes_written == 0);
    CHECK(run.steps == 1);
}

TEST_CASE("hand-assembled restore stub is interpreted faithfully") {
    // Every byte below is a fixed literal worked out by hand, so this run
    // cannot inherit a bug from the instruction emitter. The stub restores
    // the 16 bytes "Deadbeefcafefood" at 0x402a40 and jumps to 0x401000.
    MemoryMap map = synthetic_map();
    const Bytes stub = {
        0xc7, 0x05, 0x40, 0x2a, 0x40, 0x00, 'D',  'e',  'a',  'd',   // mov dword [0x402a40]
        0xc7, 0x05, 0x44, 0x2a, 0x40, 0x00, 'b',  'e',  'e',  'f',   // mov dword [0x402a44]
        0xc7, 0x05, 0x48, 0x2a, 0x40, 0x00, 'c',  'a',  'f',  'e',   // mov dword [0x402a48]
        0xc7, 0x05, 0x4c, 0x2a, 0x40, 0x00, 'f',  'o',  'o',  'd',   // mov dword [0x402a4c]
        0xe9, 0xd3, 0xdf, 0xff, 0xff,                                // jmp 0x401000
    };
    place(map, 0x403000, stub);

    const StubRun run = interpret_stub(map, 0x403000, 4 * 16 + 16);
    CHECK(run.exit_va == 0x401000);
    CHECK(run.steps == 5);
    CHECK(run.bytes_written == 16);
    const char* want = "Deadbeefcafefood";
    for (std::uint32_t i = 0; i < 16; ++i)
        CHECK(map.read(0x402a40 + i) == static_cast<std::uint8_t>(want[i]));
    // neighbours untouched
    CHECK(map.read(0x402a3f) == 0x00);
    CHECK(map.read(0x402a50) == 0x00);
}

TEST_CASE("byte-form mov writes one byte") {
    MemoryMap map = synthetic_map();
    // mov byte [0x402a4e], 0x66 then jmp 0x401000 (from 0x403007)
    place(map, 0x403000,
          {0xc6, 0x05, 0x4e, 0x2a, 0x40, 0x00, 0x66, 0xe9, 0xf4, 0xdf, 0xff, 0xff});
    const StubRun run = interpret_stub(map, 0x403000, 16);
    CHECK(run.bytes_written == 1);
    CHECK(run.steps == 2);
    CHECK(run.exit_va == 0x401000);
    CHECK(map.read(0x402a4e) == 0x66);
}

TEST_CASE("interpreter faults are typed") {
    SUBCASE("unknown opcode") {
        MemoryMap map = synthetic_map();
        place(map, 0x403000, {0x90});
        CHECK(code_of([&] { interpret_stub(map, 0x403000, 16); }) == Errc::UnknownOpcode);
    }
    SUBCASE("unmapped entry") {
        MemoryMap map = synthetic_map();
        CHECK(code_of([&] { interpret_stub(map, 0x500000, 16); }) == Errc::UnknownOpcode);
    }
    SUBCASE("jump loop hits the step limit") {
        MemoryMap map = synthetic_map();
        place(map, 0x403000, {0xe9, 0xfb, 0xff, 0xff, 0xff});  // jmp to itself
        CHECK(code_of([&] { interpret_stub(map, 0x403000, 100); }) == Errc::StepLimitExceeded);
    }
    SUBCASE("write to an unmapped address") {
        MemoryMap map = synthetic_map();
        place(map, 0x403000, {0xc6, 0x05, 0x00, 0x00, 0x50, 0x00, 0x41});
        CHECK(code_of([&] { interpret_stub(map, 0x403000, 16); }) == Errc::WriteFault);
    }
    SUBCASE("write into the executing region") {
        MemoryMap map = synthetic_map();
        // mov byte [0x403100], 0x41 targets the stub's own region
        place(map, 0x403000, {0xc6, 0x05, 0x00, 0x31, 0x40, 0x00, 0x41});
        CHECK(code_of([&] { interpret_stub(map, 0x403000, 16); }) == Errc::WriteFault);
    }
}

TEST_CASE("jump to a non-stub target exits even when unmapped") {
    MemoryMap map = synthetic_map();
    // jmp 0x500000 from 0x403000: rel = 0x500000 - 0x403005 = 0xfcffb
    place(map, 0x403000, {0xe9, 0xfb, 0xcf, 0x0f, 0x00});
    const StubRun run = interpret_stub(map, 0x403000, 16);
    CHECK(run.exit_va == 0x500000);
    CHECK(run.bytes_written == 0);
}

TEST_CASE("verify_preservation accepts every datadisp plan") {
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        const pe::PeImage img = fixture(seed);
        const std::size_t len = 16 + 7 * seed;
        const tf::TransformPlan plan =
            plan_datadisp(img, range_in(img, ".data", 4, len), seg::ZeroFill{});

        const VerificationReport report = verify_preservation(img, plan.new_image, plan);
        CAPTURE(seed);
        CAPTURE(report.failure);
        CHECK(report.reconstructed_ok);
        CHECK(report.mismatches.empty());
        CHECK(report.exit_va == img.optional.image_base + img.optional.address_of_entry_point);
        CHECK(report.steps == plan.stub->instructions.size());
    }
}

TEST_CASE("a corrupted stub byte breaks verification without throwing") {
    const pe::PeImage img = fixture(3);
    const tf::TransformPlan plan =
        plan_datadisp(img, range_in(img, ".data", 8, 32), seg::ZeroFill{});

    SUBCASE("flipped immediate produces a mismatch") {
        pe::PeImage bad = plan.new_image;
        bad.sections.back().body[6] ^= 0xff;  // first dword mov's low imm byte
        const VerificationReport report = verify_preservation(img, bad, plan);
        CHECK(!report.reconstructed_ok);
        CHECK(report.mismatches.size() >= 1);
    }
    SUBCASE("flipped opcode is recorded as a failure") {
        pe::PeImage bad = plan.new_image;
        bad.sections.back().body[0] = 0x90;
        VerificationReport report;
        CHECK_NOTHROW(report = verify_preservation(img, bad, plan));
        CHECK(!report.reconstructed_ok);
        CHECK(!report.failure.empty());
    }
    SUBCASE("occluded range without a correct stub shows the occlusion") {
        // point the restore at the wrong VA: the real range stays zeroed
        pe::PeImage bad = plan.new_image;
        bad.sections.back().body[2] ^= 0x40;  // perturb the first mov's target
        const VerificationReport report = verify_preservation(img, bad, plan);
        CHECK(!report.reconstructed_ok);
    }
}

TEST_CASE("append plans verify by prefix identity") {
    const pe::PeImage img = fixture(4);
    const tf::TransformPlan plan = plan_append(img, Bytes(64, 0x41));

    const VerificationReport ok = verify_preservation(img, plan.new_image, plan);
    CHECK(ok.reconstructed_ok);
    CHECK(ok.exit_va == img.optional.image_base + img.optional.address_of_entry_point);
    CHECK(ok.steps == 0);

    // tampering with a section byte is caught even though the plan is append
    pe::PeImage bad = plan.new_image;
    bad.sections[1].body[5] ^= 0x01;
    const VerificationReport report = verify_preservation(img, bad, plan);
    CHECK(!report.reconstructed_ok);
    CHECK(report.mismatches.size() == 1);
    CHECK(report.mismatches[0].expected == img.sections[1].body[5]);
}

TEST_CASE("disp plans are checked statically") {
    const pe::PeImage img = fixture(5);
    const ByteRange range = range_in(img, ".text", 32, 24);
    const tf::TransformPlan plan = plan_disp(img, range, seg::ZeroFill{});

    const VerificationReport ok = verify_preservation(img, plan.new_image, plan);
    CAPTURE(ok.failure);
    CHECK(ok.reconstructed_ok);
    CHECK(ok.steps == 0);  // no stub to run, OEP unchanged

    SUBCASE("corrupted copy bytes are mismatches") {
        pe::PeImage bad = plan.new_image;
        bad.sections.back().body[3] ^= 0xff;
        const VerificationReport report = verify_preservation(img, bad, plan);
        CHECK(!report.reconstructed_ok);
        CHECK(report.mismatches.size() == 1);
    }
    SUBCASE("retargeted in-place jump is a failure") {
        pe::PeImage bad = plan.new_image;
        bad.sections[0].body[32 + 1] ^= 0x01;  // bend the rel32
        const VerificationReport report = verify_preservation(img, bad, plan);
        CHECK(!report.reconstructed_ok);
        CHECK(!report.failure.empty());
    }
    SUBCASE("code changes outside the patch are not excused") {
        pe::PeImage bad = plan.new_image;
        bad.sections[0].body[4] ^= 0x01;  // before the displaced range
        const VerificationReport report = verify_preservation(img, bad, plan);
        CHECK(!report.reconstructed_ok);
        CHECK(report.mismatches.size() == 1);
    }
}

TEST_CASE("chained plans verify end to end") {
    const pe::PeImage img = fixture(6);
    std::vector<tf::TransformPlan> plans;

    pe::PeImage current = img;
    plans.push_back(plan_datadisp(current, range_in(current, ".data", 0, 20), seg::ZeroFill{}));
    current = plans.back().new_image;
    plans.push_back(plan_datadisp(current, range_in(img, ".data", 40, 12), seg::RandomFill{9}));
    current = plans.back().new_image;
    plans.push_back(plan_append(current, Bytes(32, 0x00)));
    current = plans.back().new_image;

    const VerificationReport report =
        verify_preservation(img, current, std::span<const tf::TransformPlan>(plans));
    CAPTURE(report.failure);
    CHECK(report.reconstructed_ok);
    CHECK(report.exit_va == img.optional.image_base + img.optional.address_of_entry_point);
    // both stubs ran: their instruction counts add up
    CHECK(report.steps ==
          plans[0].stub->instructions.size() + plans[1].stub->instructions.size());

    // dropping one stub's restore breaks the chain
    pe::PeImage bad = current;
    bad.sections[3].body[6] ^= 0x01;  // first stub's data
    const VerificationReport broken =
        verify_preservation(img, bad, std::span<const tf::TransformPlan>(plans));
    CHECK(!broken.reconstructed_ok);
}

TEST_CASE("identity transform with no plans verifies") {
    const pe::PeImage img = fixture(7);
    const VerificationReport report =
        verify_preservation(img, img, std::span<const PlanOutline>{});
    CHECK(report.reconstructed_ok);
    CHECK(report.steps == 0);
}

TEST_CASE("plan outlines carry what the oracle needs") {
    const pe::PeImage img = fixture(8);
    const tf::TransformPlan plan =
        plan_datadisp(img, range_in(img, ".data", 2, 10), seg::ZeroFill{});
    const PlanOutline outline = outline_of(plan);
    CHECK(outline.kind == tf::ActionKind::DataDisp);
    CHECK(outline.target.has_value());
    CHECK(outline.new_section_name == ".bsx0");

    const VerificationReport report = verify_preservation(
        img, plan.new_image, std::span<const PlanOutline>(&outline, 1));
    CHECK(report.reconstructed_ok);
}
