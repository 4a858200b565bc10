// Minimal scorer speaking the subprocess detector protocol: 8-byte
// little-endian payload length then the payload on stdin, one ASCII decimal
// score plus newline on stdout per request. The scoring rule is picked by
// argv[1]; the misbehaving modes exist for driving the client's error paths.

#include <cstdint>
#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

namespace {

bool read_exact(std::FILE* f, void* buf, std::size_t n) {
    return std::fread(buf, 1, n, f) == n;
}

int nibble(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

std::vector<unsigned char> hex(const std::string& s) {
    std::vector<unsigned char> out;
    for (std::size_t i = 0; i + 1 < s.size(); i += 2)
        out.push_back(static_cast<unsigned char>(nibble(s[i]) << 4 | nibble(s[i + 1])));
    return out;
}

bool contains(const std::vector<unsigned char>& haystack,
              const std::vector<unsigned char>& needle) {
    if (needle.empty() || needle.size() > haystack.size()) return false;
    return memmem(haystack.data(), haystack.size(), needle.data(), needle.size()) != nullptr;
}

}  // namespace

int main(int argc, char** argv) {
    const std::string mode = argc > 1 ? argv[1] : "size";
    std::vector<unsigned char> pattern;
    double constant = 0.0;
    if (mode.rfind("contains:", 0) == 0) pattern = hex(mode.substr(9));
    if (mode.rfind("const:", 0) == 0) constant = std::strtod(mode.c_str() + 6, nullptr);

    for (;;) {
        unsigned char hdr[8];
        if (!read_exact(stdin, hdr, sizeof hdr)) break;
        std::uint64_t len = 0;
        for (int i = 7; i >= 0; --i) len = len << 8 | hdr[i];
        std::vector<unsigned char> payload(len);
        if (len > 0 && !read_exact(stdin, payload.data(), len)) break;

        if (mode == "die") return 0;
        if (mode == "silent") continue;
        if (mode == "garbage") {
            std::fputs("banana\n", stdout);
            std::fflush(stdout);
            continue;
        }

        double score;
        if (mode.rfind("contains:", 0) == 0)
            score = contains(payload, pattern) ? 0.9 : 0.1;
        else if (mode.rfind("const:", 0) == 0)
            score = constant;
        else  // size: grows toward 1 at 1 MiB
            score = len >= 1048576 ? 1.0 : static_cast<double>(len) / 1048576.0;

        std::printf("%.17g\n", score);
        std::fflush(stdout);
    }
    return 0;
}
