#include "bytesleuth/verifier.hpp"

#include <algorithm>
#include <cstring>

namespace bytesleuth::vf {

namespace {

char hexdigit(unsigned v) { return "0123456789abcdef"[v & 0xf]; }

std::string hex32(std::uint32_t v) {
    std::string s = "0x";
    for (int shift = 28; shift >= 0; shift -= 4) s.push_back(hexdigit(v >> shift));
    return s;
}

}  // namespace

const MemoryRegion* MemoryMap::region_of(std::uint32_t va) const {
    for (const MemoryRegion& r : regions)
        if (va >= r.va_begin && va < r.va_end) return &r;
    return nullptr;
}

MemoryRegion* MemoryMap::region_of(std::uint32_t va) {
    for (MemoryRegion& r : regions)
        if (va >= r.va_begin && va < r.va_end) return &r;
    return nullptr;
}

std::uint8_t MemoryMap::read(std::uint32_t va) const {
    const MemoryRegion* r = region_of(va);
    if (r == nullptr) fail(Errc::Unmapped, "read at unmapped " + hex32(va));
    return r->data[va - r->va_begin];
}

MemoryMap build_memory_map(const pe::PeImage& image) {
    MemoryMap map;
    map.base = image.optional.image_base;

    MemoryRegion headers;
    headers.va_begin = map.base;
    headers.va_end = map.base + image.optional.size_of_headers;
    headers.data = image.header_blob;
    headers.data.resize(image.optional.size_of_headers, 0);
    if (headers.va_end > headers.va_begin) map.regions.push_back(std::move(headers));

    for (const pe::SectionRecord& s : image.sections) {
        const std::uint32_t extent = s.virtual_extent();
        if (extent == 0) continue;
        MemoryRegion r;
        r.va_begin = map.base + s.virtual_address;
        r.va_end = r.va_begin + extent;
        r.data = s.body;
        r.data.resize(extent, 0);
        r.name = s.name_str();
        map.regions.push_back(std::move(r));
    }

    std::sort(map.regions.begin(), map.regions.end(),
              [](const MemoryRegion& a, const MemoryRegion& b) { return a.va_begin < b.va_begin; });
    for (std::size_t i = 1; i < map.regions.size(); ++i) {
        if (map.regions[i].va_begin < map.regions[i - 1].va_end)
            fail(Errc::OverlapFault, "regions " + map.regions[i - 1].name + " and " +
                                         map.regions[i].name + " overlap at " +
                                         hex32(map.regions[i].va_begin));
    }
    return map;
}

namespace {

std::uint32_t read_operand32(const MemoryMap& map, std::uint32_t va) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) {
        if (!map.mapped(va + static_cast<std::uint32_t>(i)))
            fail(Errc::UnknownOpcode, "instruction truncated at " + hex32(va));
        v = (v << 8) | map.read(va + static_cast<std::uint32_t>(i));
    }
    return v;
}

// a target counts as a stub instruction iff it decodes as one of the subset
bool is_stub_instruction(const MemoryMap& map, std::uint32_t va) {
    if (!map.mapped(va)) return false;
    const std::uint8_t op = map.read(va);
    if (op == 0xe9) return map.mapped(va + 4);
    if ((op == 0xc6 || op == 0xc7) && map.mapped(va + 1)) return map.read(va + 1) == 0x05;
    return false;
}

void write_byte(MemoryMap& map, const MemoryRegion* executing, std::uint32_t va,
                std::uint8_t value) {
    MemoryRegion* r = map.region_of(va);
    if (r == nullptr) fail(Errc::WriteFault, "write at unmapped " + hex32(va));
    if (r == executing)
        fail(Errc::WriteFault, "write at " + hex32(va) + " inside the executing region");
    r->data[va - r->va_begin] = value;
}

}  // namespace

StubRun interpret_stub(MemoryMap& map, std::uint32_t entry, std::uint64_t max_steps) {
    StubRun run;
    std::uint32_t ip = entry;
    for (;;) {
        if (!map.mapped(ip)) fail(Errc::UnknownOpcode, "instruction pointer at unmapped " + hex32(ip));
        if (++run.steps > max_steps)
            fail(Errc::StepLimitExceeded, "no exit after " + std::to_string(max_steps) + " steps");
        const MemoryRegion* executing = map.region_of(ip);
        const std::uint8_t op = map.read(ip);
        if (op == 0xe9) {
            const std::int32_t rel = static_cast<std::int32_t>(read_operand32(map, ip + 1));
            const std::uint32_t target = ip + 5 + static_cast<std::uint32_t>(rel);
            if (!is_stub_instruction(map, target)) {
                run.exit_va = target;
                return run;
            }
            ip = target;
        } else if (op == 0xc6 || op == 0xc7) {
            if (!map.mapped(ip + 1) || map.read(ip + 1) != 0x05)
                fail(Errc::UnknownOpcode, "unsupported mov form at " + hex32(ip));
            const std::uint32_t dst = read_operand32(map, ip + 2);
            if (op == 0xc6) {
                if (!map.mapped(ip + 6))
                    fail(Errc::UnknownOpcode, "instruction truncated at " + hex32(ip));
                write_byte(map, executing, dst, map.read(ip + 6));
                run.bytes_written += 1;
                ip += 7;
            } else {
                const std::uint32_t imm = read_operand32(map, ip + 6);
                for (int i = 0; i < 4; ++i)
                    write_byte(map, executing, dst + static_cast<std::uint32_t>(i),
                               static_cast<std::uint8_t>(imm >> (8 * i)));
                run.bytes_written += 4;
                ip += 10;
            }
        } else {
            fail(Errc::UnknownOpcode, "byte " + hex32(op).substr(0, 4) + " at " + hex32(ip) +
                                          " is outside the stub subset");
        }
    }
}

PlanOutline outline_of(const tf::TransformPlan& plan) {
    return {plan.action.kind, plan.action.target, plan.new_section_name};
}

namespace {

void check_disp_layout(const pe::PeImage& transformed, const MemoryMap& omap,
                       const MemoryMap& tmap, const PlanOutline& plan,
                       VerificationReport& report) {
    const ByteRange range = *plan.target;
    const pe::SectionRecord* copy_sec = nullptr;
    for (const pe::SectionRecord& s : transformed.sections)
        if (s.name_str() == plan.new_section_name) copy_sec = &s;
    if (copy_sec == nullptr) {
        report.failure = "copy section " + plan.new_section_name + " missing";
        return;
    }
    const std::uint32_t base = transformed.optional.image_base;
    const std::uint32_t copy_va = base + copy_sec->virtual_address;
    const std::uint32_t range_va =
        base + pe::offset_to_rva(transformed, range.begin);

    // in-place jump must target the copy
    Bytes inplace(5);
    for (int i = 0; i < 5; ++i) inplace[static_cast<std::size_t>(i)] = tmap.read(range_va + static_cast<std::uint32_t>(i));
    auto jmp_out = tf::decode_stub_instruction(inplace, range_va);
    if (!jmp_out || jmp_out->form != tf::StubInstruction::Form::JmpRel32 ||
        jmp_out->va != copy_va) {
        report.failure = "in-place patch at " + hex32(range_va) + " does not jump to the copy";
        return;
    }
    // the copy must hold the original bytes
    for (std::size_t i = 0; i < range.length(); ++i) {
        const std::uint8_t expected = omap.read(range_va + static_cast<std::uint32_t>(i));
        const std::uint8_t found = tmap.read(copy_va + static_cast<std::uint32_t>(i));
        if (expected != found)
            report.mismatches.push_back({copy_va + static_cast<std::uint32_t>(i), expected, found});
    }
    // and end with a jump back to just past the displaced range
    const std::uint32_t back_va = copy_va + static_cast<std::uint32_t>(range.length());
    Bytes back(5);
    for (int i = 0; i < 5; ++i) back[static_cast<std::size_t>(i)] = tmap.read(back_va + static_cast<std::uint32_t>(i));
    auto jmp_back = tf::decode_stub_instruction(back, back_va);
    if (!jmp_back || jmp_back->form != tf::StubInstruction::Form::JmpRel32 ||
        jmp_back->va != range_va + range.length()) {
        report.failure = "copy at " + hex32(copy_va) + " does not jump back past the range";
    }
}

}  // namespace

VerificationReport verify_preservation(const pe::PeImage& original,
                                       const pe::PeImage& transformed,
                                       std::span<const PlanOutline> plans) {
    VerificationReport report;
    const std::uint32_t base = original.optional.image_base;
    const std::uint32_t original_entry = base + original.optional.address_of_entry_point;

    MemoryMap omap, tmap;
    try {
        omap = build_memory_map(original);
        tmap = build_memory_map(transformed);
    } catch (const Error& e) {
        report.failure = e.what();
        return report;
    }

    std::uint64_t displaced = 0;
    bool all_append = true;
    for (const PlanOutline& p : plans) {
        if (p.kind != tf::ActionKind::Append) all_append = false;
        if (p.kind == tf::ActionKind::DataDisp && p.target) displaced += p.target->length();
    }

    // run the restoration chain when an entry stub is installed
    if (transformed.optional.address_of_entry_point != original.optional.address_of_entry_point) {
        try {
            const StubRun run = interpret_stub(
                tmap, base + transformed.optional.address_of_entry_point, 4 * displaced + 16);
            report.exit_va = run.exit_va;
            report.steps = run.steps;
        } catch (const Error& e) {
            report.failure = e.what();
            return report;
        }
        if (report.exit_va != original_entry) {
            report.failure = "stub exits at " + hex32(report.exit_va) + ", expected " +
                             hex32(original_entry);
            return report;
        }
    } else {
        report.exit_va = original_entry;
    }

    // VAs that legitimately differ: Disp patches live inside original sections
    std::vector<std::pair<std::uint32_t, std::uint32_t>> excluded;
    for (const PlanOutline& p : plans) {
        if (p.kind != tf::ActionKind::Disp || !p.target) continue;
        const std::uint32_t lo = base + pe::offset_to_rva(original, p.target->begin);
        excluded.emplace_back(lo, lo + static_cast<std::uint32_t>(p.target->length()));
        check_disp_layout(transformed, omap, tmap, p, report);
        if (!report.failure.empty()) return report;
    }

    // every byte of every original section must read back identically
    for (const MemoryRegion& region : omap.regions) {
        if (region.name.empty()) continue;  // headers are edited by design
        const MemoryRegion* tr = tmap.region_of(region.va_begin);
        if (tr == nullptr || tr->va_end < region.va_end) {
            report.failure = "section " + region.name + " is not fully mapped after transform";
            return report;
        }
        const std::uint8_t* want = region.data.data();
        const std::uint8_t* have = tr->data.data() + (region.va_begin - tr->va_begin);
        const std::size_t len = region.data.size();

        std::vector<std::pair<std::size_t, std::size_t>> holes;
        for (const auto& [lo, hi] : excluded) {
            const std::uint32_t clo = std::max(lo, region.va_begin);
            const std::uint32_t chi = std::min(hi, region.va_end);
            if (clo < chi) holes.emplace_back(clo - region.va_begin, chi - region.va_begin);
        }
        if (holes.empty() && std::memcmp(want, have, len) == 0) continue;

        for (std::size_t i = 0; i < len; ++i) {
            bool skip = false;
            for (const auto& [lo, hi] : holes)
                if (i >= lo && i < hi) {
                    skip = true;
                    break;
                }
            if (!skip && want[i] != have[i])
                report.mismatches.push_back(
                    {region.va_begin + static_cast<std::uint32_t>(i), want[i], have[i]});
        }
    }

    if (all_append && !plans.empty()) {
        const Bytes before = pe::serialize(original);
        const Bytes after = pe::serialize(transformed);
        if (after.size() < before.size() ||
            !std::equal(before.begin(), before.end(), after.begin()))
            report.failure = "appended file does not keep the original as a prefix";
    }

    report.reconstructed_ok = report.mismatches.empty() && report.failure.empty() &&
                              report.exit_va == original_entry;
    return report;
}

VerificationReport verify_preservation(const pe::PeImage& original,
                                       const pe::PeImage& transformed,
                                       const tf::TransformPlan& plan) {
    const PlanOutline outline = outline_of(plan);
    return verify_preservation(original, transformed, std::span<const PlanOutline>(&outline, 1));
}

VerificationReport verify_preservation(const pe::PeImage& original,
                                       const pe::PeImage& transformed,
                                       std::span<const tf::TransformPlan> plans) {
    std::vector<PlanOutline> outlines;
    outlines.reserve(plans.size());
    for (const tf::TransformPlan& p : plans) outlines.push_back(outline_of(p));
    return verify_preservation(original, transformed, std::span<const PlanOutline>(outlines));
}

}  // namespace bytesleuth::vf
