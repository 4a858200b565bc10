#include "bytesleuth/formats.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace bytesleuth::fmt {

namespace {

using nlohmann::json;

json parse_json_file(const std::string& path) {
    const Bytes raw = read_file(path);
    json j = json::parse(raw.begin(), raw.end(), nullptr, false);
    if (j.is_discarded()) fail(Errc::IoError, "not valid JSON: " + path);
    return j;
}

void write_json_file(const json& j, const std::string& path) {
    write_text(path, j.dump(2) + "\n");
}

int hex_nibble(char c) {
    if (c >= '0' && c <= '9') return c - '0';
    if (c >= 'a' && c <= 'f') return c - 'a' + 10;
    if (c >= 'A' && c <= 'F') return c - 'A' + 10;
    return -1;
}

}  // namespace

std::string hex_encode(ByteView data) {
    static const char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(data.size() * 2);
    for (std::uint8_t b : data) {
        out.push_back(digits[b >> 4]);
        out.push_back(digits[b & 0xf]);
    }
    return out;
}

Bytes hex_decode(std::string_view text) {
    if (text.size() % 2 != 0) fail(Errc::BadArguments, "hex string has odd length");
    Bytes out;
    out.reserve(text.size() / 2);
    for (std::size_t i = 0; i < text.size(); i += 2) {
        const int hi = hex_nibble(text[i]);
        const int lo = hex_nibble(text[i + 1]);
        if (hi < 0 || lo < 0) fail(Errc::BadArguments, "invalid hex digit");
        out.push_back(static_cast<std::uint8_t>(hi << 4 | lo));
    }
    return out;
}

Bytes read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(Errc::IoError, "cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    if (in.bad()) fail(Errc::IoError, "read failed: " + path);
    const std::string s = buf.str();
    return Bytes(s.begin(), s.end());
}

void write_file(const std::string& path, ByteView data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail(Errc::IoError, "cannot open " + path + " for writing");
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size()));
    out.flush();
    if (!out) fail(Errc::IoError, "write failed: " + path);
}

void write_text(const std::string& path, const std::string& text) {
    write_file(path, ByteView(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

det::NgramModel load_ngram_model(const std::string& path) {
    const json j = parse_json_file(path);
    if (!j.is_object() || j.value("kind", "") != "ngram" || !j.contains("n") ||
        !j.contains("bias") || !j.contains("weights") || !j["weights"].is_object() ||
        !j["n"].is_number_integer() || !j["bias"].is_number())
        fail(Errc::IoError, "not an ngram model file: " + path);

    det::NgramModel model;
    model.n = j["n"].get<std::size_t>();
    model.bias = j["bias"].get<double>();
    for (const auto& [key, value] : j["weights"].items()) {
        if (!value.is_number()) fail(Errc::IoError, "non-numeric weight in " + path);
        const Bytes gram = hex_decode(key);
        model.weights.emplace_back(std::string(gram.begin(), gram.end()), value.get<double>());
    }
    std::sort(model.weights.begin(), model.weights.end());
    return model;
}

void save_ngram_model(const det::NgramModel& model, const std::string& path) {
    json weights = json::object();
    for (const auto& [gram, w] : model.weights)
        weights[hex_encode(ByteView(reinterpret_cast<const std::uint8_t*>(gram.data()),
                                    gram.size()))] = w;
    const json j = {{"kind", "ngram"}, {"n", model.n}, {"bias", model.bias},
                    {"weights", weights}};
    write_json_file(j, path);
}

PlantedSpec load_planted_spec(const std::string& path) {
    const json j = parse_json_file(path);
    if (!j.is_object() || j.value("kind", "") != "planted" || !j.contains("base_score") ||
        !j["base_score"].is_number() || !j.contains("signatures") || !j["signatures"].is_array())
        fail(Errc::IoError, "not a planted-signature file: " + path);

    PlantedSpec spec;
    spec.base_score = j["base_score"].get<double>();
    for (const json& s : j["signatures"]) {
        if (!s.is_object() || !s.contains("pattern") || !s["pattern"].is_string() ||
            !s.contains("weight") || !s["weight"].is_number())
            fail(Errc::IoError, "malformed signature entry in " + path);
        spec.signatures.push_back(
            {hex_decode(s["pattern"].get<std::string>()), s["weight"].get<double>()});
    }
    return spec;
}

void save_planted_spec(const PlantedSpec& spec, const std::string& path) {
    json sigs = json::array();
    for (const det::PlantedSignature& s : spec.signatures)
        sigs.push_back({{"pattern", hex_encode(s.pattern)}, {"weight", s.weight}});
    const json j = {{"kind", "planted"}, {"base_score", spec.base_score}, {"signatures", sigs}};
    write_json_file(j, path);
}

std::vector<seg::BlockRecord> load_listing(const std::string& path) {
    const json j = parse_json_file(path);
    if (!j.is_array()) fail(Errc::IoError, "listing file must be a JSON array: " + path);
    std::vector<seg::BlockRecord> blocks;
    for (const json& e : j) {
        if (!e.is_object() || !e.contains("start") || !e["start"].is_number_integer() ||
            !e.contains("length") || !e["length"].is_number_integer())
            fail(Errc::IoError, "malformed listing entry in " + path);
        blocks.push_back({e["start"].get<std::size_t>(), e["length"].get<std::size_t>()});
    }
    return blocks;
}

void save_listing(const std::vector<seg::BlockRecord>& blocks, const std::string& path) {
    json j = json::array();
    for (const seg::BlockRecord& b : blocks)
        j.push_back({{"start", b.start}, {"length", b.length}});
    write_json_file(j, path);
}

std::string policy_to_string(const seg::OcclusionPolicy& policy) {
    if (std::holds_alternative<seg::ZeroFill>(policy)) return "zero";
    if (const auto* r = std::get_if<seg::RandomFill>(&policy)) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "random:%llu",
                      static_cast<unsigned long long>(r->seed));
        return buf;
    }
    const auto& a = std::get<seg::AdversarialFill>(policy);
    return "adversarial:" + hex_encode(a.pattern);
}

}  // namespace bytesleuth::fmt
