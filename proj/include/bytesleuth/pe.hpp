#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "bytesleuth/common.hpp"

namespace bytesleuth::pe {

// IMAGE_SCN_* characteristics bits used by the rewriter.
inline constexpr std::uint32_t kScnCntCode = 0x00000020;
inline constexpr std::uint32_t kScnCntInitializedData = 0x00000040;
inline constexpr std::uint32_t kScnMemExecute = 0x20000000;
inline constexpr std::uint32_t kScnMemRead = 0x40000000;
inline constexpr std::uint32_t kScnMemWrite = 0x80000000;

struct CoffHeader {
    std::uint16_t machine = 0;
    std::uint16_t number_of_sections = 0;
    std::uint32_t time_date_stamp = 0;
    std::uint32_t pointer_to_symbol_table = 0;
    std::uint32_t number_of_symbols = 0;
    std::uint16_t size_of_optional_header = 0;
    std::uint16_t characteristics = 0;

    bool operator==(const CoffHeader&) const = default;
};

// PE32 optional header (magic 0x10B). PE32+ images are rejected at parse.
struct OptionalHeader {
    std::uint16_t magic = 0;
    std::uint8_t major_linker_version = 0;
    std::uint8_t minor_linker_version = 0;
    std::uint32_t size_of_code = 0;
    std::uint32_t size_of_initialized_data = 0;
    std::uint32_t size_of_uninitialized_data = 0;
    std::uint32_t address_of_entry_point = 0;
    std::uint32_t base_of_code = 0;
    std::uint32_t base_of_data = 0;
    std::uint32_t image_base = 0;
    std::uint32_t section_alignment = 0;
    std::uint32_t file_alignment = 0;
    std::uint16_t major_os_version = 0;
    std::uint16_t minor_os_version = 0;
    std::uint16_t major_image_version = 0;
    std::uint16_t minor_image_version = 0;
    std::uint16_t major_subsystem_version = 0;
    std::uint16_t minor_subsystem_version = 0;
    std::uint32_t win32_version_value = 0;
    std::uint32_t size_of_image = 0;
    std::uint32_t size_of_headers = 0;
    std::uint32_t checksum = 0;
    std::uint16_t subsystem = 0;
    std::uint16_t dll_characteristics = 0;
    std::uint32_t size_of_stack_reserve = 0;
    std::uint32_t size_of_stack_commit = 0;
    std::uint32_t size_of_heap_reserve = 0;
    std::uint32_t size_of_heap_commit = 0;
    std::uint32_t loader_flags = 0;
    std::uint32_t number_of_rva_and_sizes = 0;

    bool operator==(const OptionalHeader&) const = default;
};

struct DataDirectory {
    std::uint32_t rva = 0;
    std::uint32_t size = 0;

    bool operator==(const DataDirectory&) const = default;
};

inline constexpr std::size_t kRelocDirectoryIndex = 5;

struct SectionRecord {
    std::array<std::uint8_t, 8> name{};
    std::uint32_t virtual_size = 0;
    std::uint32_t virtual_address = 0;
    std::uint32_t raw_size = 0;
    std::uint32_t raw_offset = 0;
    std::uint32_t pointer_to_relocations = 0;
    std::uint32_t pointer_to_linenumbers = 0;
    std::uint16_t number_of_relocations = 0;
    std::uint16_t number_of_linenumbers = 0;
    std::uint32_t characteristics = 0;
    Bytes body;        // exactly raw_size bytes
    Bytes gap_before;  // file slack between the previous raw region and this one

    std::string name_str() const;
    // loaded extent in memory: raw tail beyond virtual_size stays mapped
    std::uint32_t virtual_extent() const;
    bool executable() const { return characteristics & kScnMemExecute; }
    bool writable() const { return characteristics & kScnMemWrite; }

    bool operator==(const SectionRecord&) const = default;
};

// Parsed, rewritable model of a PE32 file. Immutable: every edit returns a
// new value. Unparsed slack (DOS stub, header padding, inter-section gaps,
// overlay) is carried verbatim so serialize(parse(b)) == b.
struct PeImage {
    Bytes header_blob;  // [0, first section raw offset)
    std::uint32_t e_lfanew = 0;
    CoffHeader coff;
    OptionalHeader optional;
    std::vector<DataDirectory> data_directories;
    std::vector<SectionRecord> sections;  // section-table order
    Bytes trailing_data;                  // overlay after the last raw region

    bool has_relocations() const {
        return data_directories.size() > kRelocDirectoryIndex &&
               data_directories[kRelocDirectoryIndex].rva != 0 &&
               data_directories[kRelocDirectoryIndex].size != 0;
    }

    // file offset just past the section table
    std::size_t section_table_end() const;
    std::size_t serialized_size() const;
    const SectionRecord* section_containing_rva(std::uint32_t rva) const;
    const SectionRecord* section_containing_offset(std::size_t off) const;

    bool operator==(const PeImage&) const = default;
};

PeImage parse_pe(ByteView bytes);
Bytes serialize(const PeImage& image);

PeImage append_section(const PeImage& image, std::string_view name, ByteView body,
                       std::uint32_t characteristics);
PeImage set_entry_point(const PeImage& image, std::uint32_t rva);

// RVA append_section would assign to the next section
std::uint32_t next_section_va(const PeImage& image);

std::size_t rva_to_offset(const PeImage& image, std::uint32_t rva);
std::uint32_t offset_to_rva(const PeImage& image, std::size_t off);

// Deterministic PE32 test fixture: three sections (.text/.data/.rsrc),
// alignments and sizes varied by seed.
Bytes make_minimal_pe(std::uint64_t seed);

inline std::uint64_t align_up(std::uint64_t value, std::uint64_t alignment) {
    if (alignment == 0) return value;
    return (value + alignment - 1) / alignment * alignment;
}

}  // namespace bytesleuth::pe
