#include "bytesleuth/pe.hpp"

#include <algorithm>
#include <cstring>
#include <numeric>

namespace bytesleuth::pe {

namespace {

constexpr std::size_t kDosHeaderSize = 64;
constexpr std::size_t kELfanewOffset = 0x3c;
constexpr std::size_t kCoffSize = 20;
constexpr std::size_t kSectionHeaderSize = 40;
constexpr std::uint16_t kPe32Magic = 0x10b;
constexpr std::uint16_t kPe32PlusMagic = 0x20b;
// standard(24 incl. BaseOfData) + windows-specific(68) fields, before directories
constexpr std::size_t kOptionalFixedSize = 96;

class Reader {
public:
    explicit Reader(ByteView data) : data_(data) {}

    std::uint8_t u8(std::size_t off) const {
        check(off, 1);
        return data_[off];
    }
    std::uint16_t u16(std::size_t off) const {
        check(off, 2);
        return static_cast<std::uint16_t>(data_[off] | (data_[off + 1] << 8));
    }
    std::uint32_t u32(std::size_t off) const {
        check(off, 4);
        return static_cast<std::uint32_t>(data_[off]) |
               (static_cast<std::uint32_t>(data_[off + 1]) << 8) |
               (static_cast<std::uint32_t>(data_[off + 2]) << 16) |
               (static_cast<std::uint32_t>(data_[off + 3]) << 24);
    }
    ByteView slice(std::size_t off, std::size_t len) const {
        check(off, len);
        return data_.subspan(off, len);
    }

private:
    void check(std::size_t off, std::size_t len) const {
        if (off + len > data_.size() || off + len < off)
            fail(Errc::TruncatedHeader, "read past end of file at offset " + std::to_string(off));
    }
    ByteView data_;
};

void put_u16(Bytes& out, std::size_t off, std::uint16_t v) {
    out[off] = static_cast<std::uint8_t>(v & 0xff);
    out[off + 1] = static_cast<std::uint8_t>(v >> 8);
}

void put_u32(Bytes& out, std::size_t off, std::uint32_t v) {
    out[off] = static_cast<std::uint8_t>(v & 0xff);
    out[off + 1] = static_cast<std::uint8_t>((v >> 8) & 0xff);
    out[off + 2] = static_cast<std::uint8_t>((v >> 16) & 0xff);
    out[off + 3] = static_cast<std::uint8_t>((v >> 24) & 0xff);
}

// indices of sections with raw data, sorted by raw_offset
std::vector<std::size_t> raw_order(const std::vector<SectionRecord>& sections) {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < sections.size(); ++i)
        if (sections[i].raw_size > 0) idx.push_back(i);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
        return sections[a].raw_offset < sections[b].raw_offset;
    });
    return idx;
}

void encode_headers_into(const PeImage& img, Bytes& blob) {
    const std::size_t pe = img.e_lfanew;
    put_u32(blob, kELfanewOffset, img.e_lfanew);

    std::size_t off = pe + 4;
    put_u16(blob, off + 0, img.coff.machine);
    put_u16(blob, off + 2, img.coff.number_of_sections);
    put_u32(blob, off + 4, img.coff.time_date_stamp);
    put_u32(blob, off + 8, img.coff.pointer_to_symbol_table);
    put_u32(blob, off + 12, img.coff.number_of_symbols);
    put_u16(blob, off + 16, img.coff.size_of_optional_header);
    put_u16(blob, off + 18, img.coff.characteristics);

    off += kCoffSize;
    const OptionalHeader& o = img.optional;
    put_u16(blob, off + 0, o.magic);
    blob[off + 2] = o.major_linker_version;
    blob[off + 3] = o.minor_linker_version;
    put_u32(blob, off + 4, o.size_of_code);
    put_u32(blob, off + 8, o.size_of_initialized_data);
    put_u32(blob, off + 12, o.size_of_uninitialized_data);
    put_u32(blob, off + 16, o.address_of_entry_point);
    put_u32(blob, off + 20, o.base_of_code);
    put_u32(blob, off + 24, o.base_of_data);
    put_u32(blob, off + 28, o.image_base);
    put_u32(blob, off + 32, o.section_alignment);
    put_u32(blob, off + 36, o.file_alignment);
    put_u16(blob, off + 40, o.major_os_version);
    put_u16(blob, off + 42, o.minor_os_version);
    put_u16(blob, off + 44, o.major_image_version);
    put_u16(blob, off + 46, o.minor_image_version);
    put_u16(blob, off + 48, o.major_subsystem_version);
    put_u16(blob, off + 50, o.minor_subsystem_version);
    put_u32(blob, off + 52, o.win32_version_value);
    put_u32(blob, off + 56, o.size_of_image);
    put_u32(blob, off + 60, o.size_of_headers);
    put_u32(blob, off + 64, o.checksum);
    put_u16(blob, off + 68, o.subsystem);
    put_u16(blob, off + 70, o.dll_characteristics);
    put_u32(blob, off + 72, o.size_of_stack_reserve);
    put_u32(blob, off + 76, o.size_of_stack_commit);
    put_u32(blob, off + 80, o.size_of_heap_reserve);
    put_u32(blob, off + 84, o.size_of_heap_commit);
    put_u32(blob, off + 88, o.loader_flags);
    put_u32(blob, off + 92, o.number_of_rva_and_sizes);

    std::size_t dir_off = off + kOptionalFixedSize;
    for (const DataDirectory& d : img.data_directories) {
        put_u32(blob, dir_off, d.rva);
        put_u32(blob, dir_off + 4, d.size);
        dir_off += 8;
    }

    std::size_t sec_off = pe + 4 + kCoffSize + img.coff.size_of_optional_header;
    for (const SectionRecord& s : img.sections) {
        std::copy(s.name.begin(), s.name.end(), blob.begin() + static_cast<long>(sec_off));
        put_u32(blob, sec_off + 8, s.virtual_size);
        put_u32(blob, sec_off + 12, s.virtual_address);
        put_u32(blob, sec_off + 16, s.raw_size);
        put_u32(blob, sec_off + 20, s.raw_offset);
        put_u32(blob, sec_off + 24, s.pointer_to_relocations);
        put_u32(blob, sec_off + 28, s.pointer_to_linenumbers);
        put_u16(blob, sec_off + 32, s.number_of_relocations);
        put_u16(blob, sec_off + 34, s.number_of_linenumbers);
        put_u32(blob, sec_off + 36, s.characteristics);
        sec_off += kSectionHeaderSize;
    }
}

}  // namespace

std::string SectionRecord::name_str() const {
    std::size_t len = 0;
    while (len < name.size() && name[len] != 0) ++len;
    return std::string(reinterpret_cast<const char*>(name.data()), len);
}

std::uint32_t SectionRecord::virtual_extent() const { return std::max(virtual_size, raw_size); }

std::size_t PeImage::section_table_end() const {
    return e_lfanew + 4 + kCoffSize + coff.size_of_optional_header +
           sections.size() * kSectionHeaderSize;
}

std::size_t PeImage::serialized_size() const {
    std::size_t total = header_blob.size();
    for (std::size_t i : raw_order(sections))
        total += sections[i].gap_before.size() + sections[i].body.size();
    return total + trailing_data.size();
}

const SectionRecord* PeImage::section_containing_rva(std::uint32_t rva) const {
    for (const SectionRecord& s : sections) {
        if (rva >= s.virtual_address && rva - s.virtual_address < s.virtual_extent()) return &s;
    }
    return nullptr;
}

const SectionRecord* PeImage::section_containing_offset(std::size_t off) const {
    for (const SectionRecord& s : sections) {
        if (s.raw_size > 0 && off >= s.raw_offset && off - s.raw_offset < s.raw_size) return &s;
    }
    return nullptr;
}

PeImage parse_pe(ByteView bytes) {
    if (bytes.size() < kDosHeaderSize)
        fail(Errc::TruncatedHeader, "file shorter than the DOS header");
    if (bytes[0] != 0x4d || bytes[1] != 0x5a) fail(Errc::MissingMzMagic, "no MZ magic");

    Reader r(bytes);
    PeImage img;
    img.e_lfanew = r.u32(kELfanewOffset);

    ByteView sig = r.slice(img.e_lfanew, 4);
    if (!(sig[0] == 'P' && sig[1] == 'E' && sig[2] == 0 && sig[3] == 0))
        fail(Errc::MissingPeSignature, "no PE\\0\\0 signature at e_lfanew");

    std::size_t off = img.e_lfanew + 4;
    img.coff.machine = r.u16(off + 0);
    img.coff.number_of_sections = r.u16(off + 2);
    img.coff.time_date_stamp = r.u32(off + 4);
    img.coff.pointer_to_symbol_table = r.u32(off + 8);
    img.coff.number_of_symbols = r.u32(off + 12);
    img.coff.size_of_optional_header = r.u16(off + 16);
    img.coff.characteristics = r.u16(off + 18);

    off += kCoffSize;
    if (img.coff.size_of_optional_header < kOptionalFixedSize)
        fail(Errc::TruncatedHeader, "optional header too small");
    std::uint16_t magic = r.u16(off);
    if (magic == kPe32PlusMagic) fail(Errc::NotPe32, "PE32+ images are not supported");
    if (magic != kPe32Magic) fail(Errc::NotPe32, "unknown optional header magic");

    OptionalHeader& o = img.optional;
    o.magic = magic;
    o.major_linker_version = r.u8(off + 2);
    o.minor_linker_version = r.u8(off + 3);
    o.size_of_code = r.u32(off + 4);
    o.size_of_initialized_data = r.u32(off + 8);
    o.size_of_uninitialized_data = r.u32(off + 12);
    o.address_of_entry_point = r.u32(off + 16);
    o.base_of_code = r.u32(off + 20);
    o.base_of_data = r.u32(off + 24);
    o.image_base = r.u32(off + 28);
    o.section_alignment = r.u32(off + 32);
    o.file_alignment = r.u32(off + 36);
    o.major_os_version = r.u16(off + 40);
    o.minor_os_version = r.u16(off + 42);
    o.major_image_version = r.u16(off + 44);
    o.minor_image_version = r.u16(off + 46);
    o.major_subsystem_version = r.u16(off + 48);
    o.minor_subsystem_version = r.u16(off + 50);
    o.win32_version_value = r.u32(off + 52);
    o.size_of_image = r.u32(off + 56);
    o.size_of_headers = r.u32(off + 60);
    o.checksum = r.u32(off + 64);
    o.subsystem = r.u16(off + 68);
    o.dll_characteristics = r.u16(off + 70);
    o.size_of_stack_reserve = r.u32(off + 72);
    o.size_of_stack_commit = r.u32(off + 76);
    o.size_of_heap_reserve = r.u32(off + 80);
    o.size_of_heap_commit = r.u32(off + 84);
    o.loader_flags = r.u32(off + 88);
    o.number_of_rva_and_sizes = r.u32(off + 92);

    std::size_t dir_space = img.coff.size_of_optional_header - kOptionalFixedSize;
    if (o.number_of_rva_and_sizes > dir_space / 8)
        fail(Errc::TruncatedHeader, "data directories exceed optional header");
    std::size_t dir_off = off + kOptionalFixedSize;
    for (std::uint32_t i = 0; i < o.number_of_rva_and_sizes; ++i) {
        img.data_directories.push_back({r.u32(dir_off), r.u32(dir_off + 4)});
        dir_off += 8;
    }

    std::size_t sec_off = off + img.coff.size_of_optional_header;
    for (std::uint16_t i = 0; i < img.coff.number_of_sections; ++i) {
        SectionRecord s;
        ByteView nm = r.slice(sec_off, 8);
        std::copy(nm.begin(), nm.end(), s.name.begin());
        s.virtual_size = r.u32(sec_off + 8);
        s.virtual_address = r.u32(sec_off + 12);
        s.raw_size = r.u32(sec_off + 16);
        s.raw_offset = r.u32(sec_off + 20);
        s.pointer_to_relocations = r.u32(sec_off + 24);
        s.pointer_to_linenumbers = r.u32(sec_off + 28);
        s.number_of_relocations = r.u16(sec_off + 32);
        s.number_of_linenumbers = r.u16(sec_off + 34);
        s.characteristics = r.u32(sec_off + 36);
        sec_off += kSectionHeaderSize;
        img.sections.push_back(std::move(s));
    }
    const std::size_t table_end = sec_off;

    // raw ranges must not overlap each other or the headers
    std::vector<std::size_t> order = raw_order(img.sections);
    std::size_t cursor = table_end;
    for (std::size_t k = 0; k < order.size(); ++k) {
        SectionRecord& s = img.sections[order[k]];
        if (s.raw_offset < cursor)
            fail(Errc::OverlappingSections,
                 "section " + s.name_str() + " raw data overlaps at offset " +
                     std::to_string(s.raw_offset));
        if (s.raw_offset + static_cast<std::size_t>(s.raw_size) > bytes.size())
            fail(Errc::TruncatedHeader, "section " + s.name_str() + " raw data past end of file");
        cursor = s.raw_offset + s.raw_size;
    }

    const std::size_t header_end = order.empty() ? bytes.size() : img.sections[order[0]].raw_offset;
    img.header_blob.assign(bytes.begin(), bytes.begin() + static_cast<long>(header_end));

    std::size_t prev_end = header_end;
    for (std::size_t i : order) {
        SectionRecord& s = img.sections[i];
        s.gap_before.assign(bytes.begin() + static_cast<long>(prev_end),
                            bytes.begin() + static_cast<long>(s.raw_offset));
        ByteView body = r.slice(s.raw_offset, s.raw_size);
        s.body.assign(body.begin(), body.end());
        prev_end = s.raw_offset + s.raw_size;
    }
    img.trailing_data.assign(bytes.begin() + static_cast<long>(prev_end), bytes.end());
    return img;
}

Bytes serialize(const PeImage& image) {
    if (image.coff.number_of_sections != image.sections.size())
        fail(Errc::InvariantViolation, "number_of_sections does not match section list");
    if (image.section_table_end() > image.header_blob.size())
        fail(Errc::InvariantViolation, "section table extends past the header region");

    Bytes out = image.header_blob;
    encode_headers_into(image, out);

    for (std::size_t i : raw_order(image.sections)) {
        const SectionRecord& s = image.sections[i];
        if (s.body.size() != s.raw_size)
            fail(Errc::InvariantViolation,
                 "section " + s.name_str() + " body length does not match raw_size");
        out.insert(out.end(), s.gap_before.begin(), s.gap_before.end());
        if (out.size() != s.raw_offset)
            fail(Errc::InvariantViolation,
                 "section " + s.name_str() + " raw_offset does not match layout");
        out.insert(out.end(), s.body.begin(), s.body.end());
    }
    out.insert(out.end(), image.trailing_data.begin(), image.trailing_data.end());
    return out;
}

PeImage append_section(const PeImage& image, std::string_view name, ByteView body,
                       std::uint32_t characteristics) {
    if (name.empty()) fail(Errc::InvariantViolation, "section name must be nonempty");
    if (body.empty()) fail(Errc::InvariantViolation, "section body must be nonempty");

    const std::size_t table_end = image.section_table_end();
    if (table_end + kSectionHeaderSize > image.optional.size_of_headers ||
        table_end + kSectionHeaderSize > image.header_blob.size())
        fail(Errc::SectionTableFull, "no header slack for another section entry");

    PeImage out = image;

    SectionRecord s;
    for (std::size_t i = 0; i < s.name.size() && i < name.size(); ++i)
        s.name[i] = static_cast<std::uint8_t>(name[i]);
    s.characteristics = characteristics;
    s.virtual_size = static_cast<std::uint32_t>(body.size());
    s.raw_size = static_cast<std::uint32_t>(
        align_up(body.size(), std::max<std::uint32_t>(1, image.optional.file_alignment)));
    s.body.assign(body.begin(), body.end());
    s.body.resize(s.raw_size, 0);

    const std::uint32_t next_va = next_section_va(image);
    s.virtual_address = next_va;

    const std::size_t old_end = image.serialized_size();
    const std::size_t new_raw = align_up(old_end, std::max<std::uint32_t>(1, image.optional.file_alignment));
    s.raw_offset = static_cast<std::uint32_t>(new_raw);
    // the old overlay (if any) plus alignment padding now precedes the new body
    s.gap_before = out.trailing_data;
    s.gap_before.resize(s.gap_before.size() + (new_raw - old_end), 0);
    out.trailing_data.clear();

    out.sections.push_back(std::move(s));
    out.coff.number_of_sections = static_cast<std::uint16_t>(out.sections.size());
    out.optional.size_of_image = static_cast<std::uint32_t>(
        align_up(next_va + body.size(), std::max<std::uint32_t>(1, image.optional.section_alignment)));
    out.optional.checksum = 0;
    encode_headers_into(out, out.header_blob);
    return out;
}

std::uint32_t next_section_va(const PeImage& image) {
    std::uint32_t next_va = std::max<std::uint32_t>(1, image.optional.section_alignment);
    for (const SectionRecord& prev : image.sections)
        next_va = std::max(
            next_va, static_cast<std::uint32_t>(align_up(
                         prev.virtual_address + prev.virtual_extent(),
                         std::max<std::uint32_t>(1, image.optional.section_alignment))));
    return next_va;
}

PeImage set_entry_point(const PeImage& image, std::uint32_t rva) {
    if (image.section_containing_rva(rva) == nullptr)
        fail(Errc::RvaOutOfRange, "entry point rva " + std::to_string(rva) +
                                      " is not inside any section");
    PeImage out = image;
    if (out.optional.address_of_entry_point != rva) {
        out.optional.address_of_entry_point = rva;
        out.optional.checksum = 0;
        encode_headers_into(out, out.header_blob);
    }
    return out;
}

std::size_t rva_to_offset(const PeImage& image, std::uint32_t rva) {
    const SectionRecord* s = image.section_containing_rva(rva);
    if (s == nullptr || rva - s->virtual_address >= s->raw_size)
        fail(Errc::Unmapped, "rva " + std::to_string(rva) + " has no file backing");
    return s->raw_offset + (rva - s->virtual_address);
}

std::uint32_t offset_to_rva(const PeImage& image, std::size_t off) {
    const SectionRecord* s = image.section_containing_offset(off);
    if (s == nullptr)
        fail(Errc::Unmapped, "offset " + std::to_string(off) + " is not inside any section");
    return s->virtual_address + static_cast<std::uint32_t>(off - s->raw_offset);
}

Bytes make_minimal_pe(std::uint64_t seed) {
    Rng rng(sub_seed(seed, "make_minimal_pe"));

    const std::uint32_t file_align = rng.next_bernoulli(0.5) ? 0x200 : 0x400;
    const std::uint32_t sect_align = rng.next_bernoulli(0.5) ? 0x1000 : 0x2000;
    const std::uint32_t e_lfanew = rng.next_bernoulli(0.5) ? 0x40 : 0x80;
    const std::uint32_t image_base = 0x400000;

    struct Plan {
        const char* name;
        std::uint32_t characteristics;
        std::uint32_t vsize;
    };
    auto pick_size = [&](std::uint32_t lo_mult, std::uint32_t hi_mult) {
        std::uint64_t span = static_cast<std::uint64_t>(hi_mult - lo_mult) * file_align;
        return lo_mult * file_align + static_cast<std::uint32_t>(rng.next_below(span + 1));
    };
    const Plan plans[3] = {
        {".text", kScnCntCode | kScnMemExecute | kScnMemRead, pick_size(1, 4)},
        {".data", kScnCntInitializedData | kScnMemRead | kScnMemWrite, pick_size(1, 4)},
        {".rsrc", kScnCntInitializedData | kScnMemRead, pick_size(1, 2)},
    };

    // header region: DOS header (+ optional stub), PE headers, 3 section
    // entries, plus slack for a dozen more so rewrites never relocate headers
    const std::size_t table_end = e_lfanew + 4 + kCoffSize + (kOptionalFixedSize + 16 * 8) +
                                  3 * kSectionHeaderSize;
    const std::uint32_t size_of_headers =
        static_cast<std::uint32_t>(align_up(table_end + 12 * kSectionHeaderSize, file_align));

    PeImage img;
    img.e_lfanew = e_lfanew;
    img.header_blob.assign(size_of_headers, 0);
    img.header_blob[0] = 0x4d;
    img.header_blob[1] = 0x5a;
    // seeded DOS stub bytes keep slack preservation honest in round-trip tests
    for (std::size_t i = kDosHeaderSize; i < e_lfanew; ++i)
        img.header_blob[i] = rng.next_byte();
    img.header_blob[e_lfanew] = 'P';
    img.header_blob[e_lfanew + 1] = 'E';

    img.coff.machine = 0x014c;  // x86
    img.coff.number_of_sections = 3;
    img.coff.time_date_stamp = static_cast<std::uint32_t>(rng.next_u64());
    img.coff.size_of_optional_header = kOptionalFixedSize + 16 * 8;
    img.coff.characteristics = 0x0102;  // EXECUTABLE_IMAGE | 32BIT_MACHINE

    OptionalHeader& o = img.optional;
    o.magic = kPe32Magic;
    o.major_linker_version = 14;
    o.image_base = image_base;
    o.section_alignment = sect_align;
    o.file_alignment = file_align;
    o.major_os_version = 6;
    o.major_subsystem_version = 6;
    o.size_of_headers = size_of_headers;
    o.subsystem = 3;  // console
    o.size_of_stack_reserve = 0x100000;
    o.size_of_stack_commit = 0x1000;
    o.size_of_heap_reserve = 0x100000;
    o.size_of_heap_commit = 0x1000;
    o.number_of_rva_and_sizes = 16;
    img.data_directories.assign(16, DataDirectory{});

    std::uint32_t va = sect_align;
    std::uint32_t raw = size_of_headers;
    for (const Plan& p : plans) {
        SectionRecord s;
        std::string_view nm(p.name);
        for (std::size_t i = 0; i < nm.size(); ++i) s.name[i] = static_cast<std::uint8_t>(nm[i]);
        s.virtual_size = p.vsize;
        s.virtual_address = va;
        s.raw_size = static_cast<std::uint32_t>(align_up(p.vsize, file_align));
        s.raw_offset = raw;
        s.characteristics = p.characteristics;
        s.body.resize(s.raw_size);
        for (auto& b : s.body) b = rng.next_byte();
        std::fill(s.body.begin() + p.vsize, s.body.end(), 0);
        img.sections.push_back(std::move(s));
        va = static_cast<std::uint32_t>(align_up(va + std::max(p.vsize, img.sections.back().raw_size), sect_align));
        raw += img.sections.back().raw_size;
    }

    // entry point somewhere inside .text, opening with a conventional
    // prologue so the byte at the OEP never looks like a restore stub
    SectionRecord& text = img.sections[0];
    const std::uint32_t entry_off =
        static_cast<std::uint32_t>(rng.next_below(std::max<std::uint32_t>(1, text.virtual_size - 16)));
    const std::uint8_t prologue[4] = {0x55, 0x8b, 0xec, 0x90};
    std::copy(std::begin(prologue), std::end(prologue),
              text.body.begin() + entry_off);
    o.address_of_entry_point = text.virtual_address + entry_off;

    o.base_of_code = img.sections[0].virtual_address;
    o.base_of_data = img.sections[1].virtual_address;
    o.size_of_code = img.sections[0].raw_size;
    o.size_of_initialized_data = img.sections[1].raw_size + img.sections[2].raw_size;
    o.size_of_image = static_cast<std::uint32_t>(align_up(
        img.sections.back().virtual_address + img.sections.back().virtual_extent(), sect_align));

    return serialize(img);
}

}  // namespace bytesleuth::pe
