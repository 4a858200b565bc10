#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bytesleuth/common.hpp"
#include "bytesleuth/pe.hpp"
#include "bytesleuth/transform.hpp"

namespace bytesleuth::vf {

struct MemoryRegion {
    std::uint32_t va_begin = 0;
    std::uint32_t va_end = 0;
    Bytes data;        // va_end - va_begin bytes, raw tail zero-filled
    std::string name;  // section name; empty for the header region
};

struct MemoryMap {
    std::uint32_t base = 0;
    std::vector<MemoryRegion> regions;  // sorted by va_begin, non-overlapping

    const MemoryRegion* region_of(std::uint32_t va) const;
    MemoryRegion* region_of(std::uint32_t va);
    bool mapped(std::uint32_t va) const { return region_of(va) != nullptr; }
    std::uint8_t read(std::uint32_t va) const;
};

struct Mismatch {
    std::uint32_t va = 0;
    std::uint8_t expected = 0;
    std::uint8_t found = 0;
};

struct VerificationReport {
    bool reconstructed_ok = false;
    std::vector<Mismatch> mismatches;
    std::uint32_t exit_va = 0;
    std::uint64_t steps = 0;
    std::string failure;  // empty when the run itself was clean
};

MemoryMap build_memory_map(const pe::PeImage& image);

struct StubRun {
    std::uint32_t exit_va = 0;
    std::uint64_t steps = 0;
    std::uint64_t bytes_written = 0;
};

// Executes only the emission subset: mov byte [abs32], imm8 (C6 05),
// mov dword [abs32], imm32 (C7 05), jmp rel32 (E9). A jump whose target is
// not a recognized stub instruction ends the run with exit_va = target.
// Decoding is independent of the transform module's encoder.
StubRun interpret_stub(MemoryMap& map, std::uint32_t entry, std::uint64_t max_steps);

// The fields of a plan the oracle needs; reconstructible from audit logs.
struct PlanOutline {
    tf::ActionKind kind = tf::ActionKind::Append;
    std::optional<ByteRange> target;
    std::string new_section_name;
};
PlanOutline outline_of(const tf::TransformPlan& plan);

// Checks that `transformed` still reconstructs `original`: interprets the
// stub chain from the transformed entry point (when one is installed),
// compares every original section byte-for-byte in virtual memory (Disp
// ranges excluded, they legitimately hold the patch jump), requires control
// to exit at the original entry point, and statically checks Disp/Append
// layout. Interpreter errors are recorded in the report, not thrown.
VerificationReport verify_preservation(const pe::PeImage& original,
                                       const pe::PeImage& transformed,
                                       std::span<const PlanOutline> plans);
VerificationReport verify_preservation(const pe::PeImage& original,
                                       const pe::PeImage& transformed,
                                       const tf::TransformPlan& plan);
VerificationReport verify_preservation(const pe::PeImage& original,
                                       const pe::PeImage& transformed,
                                       std::span<const tf::TransformPlan> plans);

}  // namespace bytesleuth::vf
