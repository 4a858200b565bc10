#include "bytesleuth/transform.hpp"

#include <algorithm>
#include <array>

namespace bytesleuth::tf {

namespace {

constexpr std::uint32_t kStubSectionChars =
    pe::kScnCntCode | pe::kScnMemExecute | pe::kScnMemRead | pe::kScnMemWrite;  // 0xE0000020
constexpr std::uint32_t kCodeSectionChars =
    pe::kScnCntCode | pe::kScnMemExecute | pe::kScnMemRead;  // 0x60000020

void push_le32(Bytes& out, std::uint32_t v) {
    out.push_back(static_cast<std::uint8_t>(v & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
    out.push_back(static_cast<std::uint8_t>((v >> 24) & 0xff));
}

std::uint32_t read_le32(ByteView b, std::size_t off) {
    return static_cast<std::uint32_t>(b[off]) | (static_cast<std::uint32_t>(b[off + 1]) << 8) |
           (static_cast<std::uint32_t>(b[off + 2]) << 16) |
           (static_cast<std::uint32_t>(b[off + 3]) << 24);
}

std::string fresh_stub_name(const pe::PeImage& image) {
    std::size_t count = 0;
    for (const pe::SectionRecord& s : image.sections)
        if (s.name_str().rfind(".bsx", 0) == 0) ++count;
    return ".bsx" + std::to_string(count);
}

// section containing [range.begin, range.end); throws Unmapped otherwise
const pe::SectionRecord& section_for_range(const pe::PeImage& image, ByteRange range) {
    const pe::SectionRecord* sec = image.section_containing_offset(range.begin);
    if (sec == nullptr)
        fail(Errc::Unmapped, "offset " + std::to_string(range.begin) + " is not inside a section");
    if (range.end > static_cast<std::size_t>(sec->raw_offset) + sec->raw_size)
        fail(Errc::Unmapped, "range crosses out of section " + sec->name_str());
    return *sec;
}

}  // namespace

const char* action_name(ActionKind k) {
    switch (k) {
        case ActionKind::Append: return "append";
        case ActionKind::Disp: return "disp";
        case ActionKind::DataDisp: return "datadisp";
    }
    return "?";
}

bool is_structural_section(std::string_view name) {
    static constexpr std::array<std::string_view, 6> kStructural = {
        ".edata", ".idata", ".reloc", ".rsrc", ".tls", ".debug"};
    return std::find(kStructural.begin(), kStructural.end(), name) != kStructural.end();
}

Bytes StubProgram::bytes() const {
    Bytes out;
    for (const StubInstruction& ins : instructions)
        out.insert(out.end(), ins.encoded.begin(), ins.encoded.end());
    return out;
}

Bytes encode_jmp_rel32(std::uint32_t src_va, std::uint32_t dst_va) {
    const std::int64_t rel =
        static_cast<std::int64_t>(dst_va) - (static_cast<std::int64_t>(src_va) + 5);
    if (rel < INT32_MIN || rel > INT32_MAX)
        fail(Errc::DisplacementOverflow, "jump displacement does not fit rel32");
    Bytes out{0xe9};
    push_le32(out, static_cast<std::uint32_t>(static_cast<std::int32_t>(rel)));
    return out;
}

Bytes encode_mov_byte_abs(std::uint32_t va, std::uint8_t imm8) {
    Bytes out{0xc6, 0x05};
    push_le32(out, va);
    out.push_back(imm8);
    return out;
}

Bytes encode_mov_dword_abs(std::uint32_t va, std::uint32_t imm32) {
    Bytes out{0xc7, 0x05};
    push_le32(out, va);
    push_le32(out, imm32);
    return out;
}

std::optional<StubInstruction> decode_stub_instruction(ByteView code, std::uint32_t va) {
    StubInstruction ins;
    if (code.size() >= 5 && code[0] == 0xe9) {
        ins.form = StubInstruction::Form::JmpRel32;
        const std::int32_t rel = static_cast<std::int32_t>(read_le32(code, 1));
        ins.va = va + 5 + static_cast<std::uint32_t>(rel);
        ins.encoded.assign(code.begin(), code.begin() + 5);
        return ins;
    }
    if (code.size() >= 7 && code[0] == 0xc6 && code[1] == 0x05) {
        ins.form = StubInstruction::Form::MovByteAbs;
        ins.va = read_le32(code, 2);
        ins.imm = code[6];
        ins.encoded.assign(code.begin(), code.begin() + 7);
        return ins;
    }
    if (code.size() >= 10 && code[0] == 0xc7 && code[1] == 0x05) {
        ins.form = StubInstruction::Form::MovDwordAbs;
        ins.va = read_le32(code, 2);
        ins.imm = read_le32(code, 6);
        ins.encoded.assign(code.begin(), code.begin() + 10);
        return ins;
    }
    return std::nullopt;
}

TransformPlan plan_append(const pe::PeImage& image, ByteView payload) {
    if (payload.empty()) fail(Errc::InvariantViolation, "append payload must be nonempty");

    TransformPlan plan;
    plan.action.kind = ActionKind::Append;
    plan.action.payload = Bytes(payload.begin(), payload.end());
    plan.new_image = image;
    plan.new_image.trailing_data.insert(plan.new_image.trailing_data.end(), payload.begin(),
                                        payload.end());
    plan.size_delta = static_cast<std::int64_t>(payload.size());
    plan.original_oep = image.optional.address_of_entry_point;
    return plan;
}

TransformPlan plan_disp(const pe::PeImage& image, ByteRange range,
                        const seg::OcclusionPolicy& filler) {
    if (range.length() < 5)
        fail(Errc::RangeTooSmall, "code displacement needs at least 5 bytes for the jump");
    if (image.has_relocations())
        fail(Errc::RelocationsPresent, "absolute stubs break under rebasing");
    const pe::SectionRecord& sec = section_for_range(image, range);
    if (!sec.executable())
        fail(Errc::NotExecutableSection, "range lies in non-executable section " + sec.name_str());

    const std::size_t sec_index = static_cast<std::size_t>(&sec - image.sections.data());
    const std::size_t local = range.begin - sec.raw_offset;
    const std::uint32_t base = image.optional.image_base;
    const std::uint32_t range_va = base + sec.virtual_address + static_cast<std::uint32_t>(local);
    const std::uint32_t end_va = range_va + static_cast<std::uint32_t>(range.length());
    const std::uint32_t copy_va = base + pe::next_section_va(image);

    // copy of the displaced code followed by the jump back
    Bytes body(sec.body.begin() + static_cast<long>(local),
               sec.body.begin() + static_cast<long>(local + range.length()));
    const Bytes jmp_back =
        encode_jmp_rel32(copy_va + static_cast<std::uint32_t>(range.length()), end_va);
    body.insert(body.end(), jmp_back.begin(), jmp_back.end());

    pe::PeImage edited = image;
    pe::SectionRecord& target = edited.sections[sec_index];
    const Bytes jmp_out = encode_jmp_rel32(range_va, copy_va);
    std::copy(jmp_out.begin(), jmp_out.end(), target.body.begin() + static_cast<long>(local));
    if (range.length() > 5)
        seg::fill_region(target.body, local + 5, range.length() - 5, filler);
    edited.optional.checksum = 0;

    TransformPlan plan;
    plan.new_section_name = fresh_stub_name(image);
    plan.new_image = pe::append_section(edited, plan.new_section_name, body, kCodeSectionChars);
    plan.action.kind = ActionKind::Disp;
    plan.action.target = range;
    plan.action.filler = filler;
    plan.size_delta = static_cast<std::int64_t>(plan.new_image.serialized_size()) -
                      static_cast<std::int64_t>(image.serialized_size());
    plan.original_oep = image.optional.address_of_entry_point;
    return plan;
}

TransformPlan plan_datadisp(const pe::PeImage& image, ByteRange range,
                            const seg::OcclusionPolicy& filler, bool batch_dwords) {
    if (range.begin > range.end) fail(Errc::InvariantViolation, "inverted range");
    if (image.has_relocations())
        fail(Errc::RelocationsPresent, "absolute stubs break under rebasing");

    const std::uint32_t base = image.optional.image_base;
    pe::PeImage edited = image;
    Bytes original;
    std::uint32_t range_va = 0;

    if (range.length() > 0) {
        const pe::SectionRecord& sec = section_for_range(image, range);
        if (is_structural_section(sec.name_str()))
            fail(Errc::StructuralRange,
                 "section " + sec.name_str() + " carries structural information");
        const std::size_t local = range.begin - sec.raw_offset;
        range_va = base + sec.virtual_address + static_cast<std::uint32_t>(local);

        pe::SectionRecord& target =
            edited.sections[static_cast<std::size_t>(&sec - image.sections.data())];
        original.assign(target.body.begin() + static_cast<long>(local),
                        target.body.begin() + static_cast<long>(local + range.length()));
        seg::fill_region(target.body, local, range.length(), filler);
        target.characteristics |= pe::kScnMemWrite;  // stub writes back at load time
        edited.optional.checksum = 0;
    }

    StubProgram stub;
    stub.entry_va = base + pe::next_section_va(image);
    stub.exit_target_va = base + image.optional.address_of_entry_point;

    std::uint32_t ip = stub.entry_va;
    std::size_t i = 0;
    while (i < original.size()) {
        StubInstruction ins;
        if (batch_dwords && original.size() - i >= 4) {
            ins.form = StubInstruction::Form::MovDwordAbs;
            ins.va = range_va + static_cast<std::uint32_t>(i);
            ins.imm = read_le32(original, i);
            ins.encoded = encode_mov_dword_abs(ins.va, ins.imm);
            i += 4;
        } else {
            ins.form = StubInstruction::Form::MovByteAbs;
            ins.va = range_va + static_cast<std::uint32_t>(i);
            ins.imm = original[i];
            ins.encoded = encode_mov_byte_abs(ins.va, static_cast<std::uint8_t>(ins.imm));
            i += 1;
        }
        ip += static_cast<std::uint32_t>(ins.encoded.size());
        stub.instructions.push_back(std::move(ins));
    }
    StubInstruction exit;
    exit.form = StubInstruction::Form::JmpRel32;
    exit.va = stub.exit_target_va;
    exit.encoded = encode_jmp_rel32(ip, stub.exit_target_va);
    stub.instructions.push_back(std::move(exit));

    TransformPlan plan;
    plan.new_section_name = fresh_stub_name(image);
    plan.new_image =
        pe::append_section(edited, plan.new_section_name, stub.bytes(), kStubSectionChars);
    plan.new_image = pe::set_entry_point(plan.new_image, stub.entry_va - base);
    plan.action.kind = ActionKind::DataDisp;
    plan.action.target = range;
    plan.action.filler = filler;
    plan.stub = std::move(stub);
    plan.size_delta = static_cast<std::int64_t>(plan.new_image.serialized_size()) -
                      static_cast<std::int64_t>(image.serialized_size());
    plan.original_oep = image.optional.address_of_entry_point;
    return plan;
}

Bytes fill_gap(ByteView b, ByteRange range, const seg::OcclusionPolicy& policy) {
    if (range.begin > range.end || range.end > b.size())
        fail(Errc::OutOfBounds, "range [" + std::to_string(range.begin) + "," +
                                    std::to_string(range.end) + ") outside input");
    Bytes out(b.begin(), b.end());
    seg::fill_region(out, range.begin, range.length(), policy);
    return out;
}

}  // namespace bytesleuth::tf
