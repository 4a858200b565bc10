#pragma once

#include <optional>
#include <string>
#include <vector>

#include "bytesleuth/common.hpp"
#include "bytesleuth/pe.hpp"
#include "bytesleuth/segmentation.hpp"

namespace bytesleuth::tf {

enum class ActionKind { Append, Disp, DataDisp };
const char* action_name(ActionKind k);

struct TransformAction {
    ActionKind kind = ActionKind::Append;
    std::optional<ByteRange> target;  // file offsets; required for Disp/DataDisp
    seg::OcclusionPolicy filler = seg::ZeroFill{};
    std::optional<Bytes> payload;  // required for Append
};

struct StubInstruction {
    enum class Form { MovByteAbs, MovDwordAbs, JmpRel32 };
    Form form = Form::JmpRel32;
    std::uint32_t va = 0;   // write target, or jump destination for JmpRel32
    std::uint32_t imm = 0;  // imm8 / imm32; unused for JmpRel32
    Bytes encoded;
};

struct StubProgram {
    std::vector<StubInstruction> instructions;
    std::uint32_t entry_va = 0;
    std::uint32_t exit_target_va = 0;

    Bytes bytes() const;
};

struct TransformPlan {
    TransformAction action;
    pe::PeImage new_image;
    std::optional<StubProgram> stub;  // DataDisp only
    std::int64_t size_delta = 0;
    std::uint32_t original_oep = 0;  // RVA before this plan was applied
    std::string new_section_name;    // empty for Append
};

// x86 (32-bit) emission subset
Bytes encode_jmp_rel32(std::uint32_t src_va, std::uint32_t dst_va);
Bytes encode_mov_byte_abs(std::uint32_t va, std::uint8_t imm8);
Bytes encode_mov_dword_abs(std::uint32_t va, std::uint32_t imm32);

// Decodes one instruction of the emission subset at code[0] (instruction VA
// given for rel32 resolution); nullopt when the bytes are not in the subset.
std::optional<StubInstruction> decode_stub_instruction(ByteView code, std::uint32_t va);

TransformPlan plan_append(const pe::PeImage& image, ByteView payload);
TransformPlan plan_disp(const pe::PeImage& image, ByteRange range,
                        const seg::OcclusionPolicy& filler);
TransformPlan plan_datadisp(const pe::PeImage& image, ByteRange range,
                            const seg::OcclusionPolicy& filler, bool batch_dwords = true);

Bytes fill_gap(ByteView b, ByteRange range, const seg::OcclusionPolicy& policy);

// sections whose occlusion would destroy structural information
bool is_structural_section(std::string_view name);

}  // namespace bytesleuth::tf
