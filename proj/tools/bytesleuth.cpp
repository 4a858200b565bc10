// bytesleuth command-line tool: explanation, hot-region search, evasion
// attacks and preservation checks over PE32 inputs, against any detector
// reachable through the spec grammar. Every run emits a manifest that the
// `replay` subcommand can re-execute bit-for-bit.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "bytesleuth/attack.hpp"
#include "bytesleuth/detector.hpp"
#include "bytesleuth/explain.hpp"
#include "bytesleuth/fastlsm.hpp"
#include "bytesleuth/formats.hpp"
#include "bytesleuth/pe.hpp"
#include "bytesleuth/segmentation.hpp"
#include "bytesleuth/transform.hpp"
#include "bytesleuth/verifier.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace bytesleuth;

namespace {

constexpr const char* kToolVersion = "bytesleuth 0.1.0";

std::string fmt_g17(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::string fmt_g(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

json digest_of(const std::string& path) {
    const Bytes data = fmt::read_file(path);
    char hex[20];
    std::snprintf(hex, sizeof hex, "%016llx",
                  static_cast<unsigned long long>(fnv1a64(ByteView(data))));
    return json{{"path", path}, {"fnv1a64", hex}, {"size", data.size()}};
}

// every run that names an output directory drops exactly one manifest there;
// without one the manifest goes to stdout
void emit_manifest(const std::string& command, const json& cfg,
                   const std::vector<std::string>& input_paths,
                   const std::vector<std::string>& outputs, const std::string& out_dir) {
    json inputs = json::array();
    for (const std::string& p : input_paths) inputs.push_back(digest_of(p));
    const json manifest = {{"tool", kToolVersion},
                           {"command", command},
                           {"seed", cfg.value("seed", std::uint64_t{0})},
                           {"config", cfg},
                           {"inputs", inputs},
                           {"outputs", outputs}};
    if (out_dir.empty()) {
        std::cout << manifest.dump() << "\n";
    } else {
        fs::create_directories(out_dir);
        fmt::write_text((fs::path(out_dir) / "manifest.json").string(), manifest.dump(2) + "\n");
    }
}

seg::OcclusionPolicy parse_filler(const json& cfg) {
    const std::string spec = cfg.value("filler", "zero");
    if (spec == "zero") return seg::ZeroFill{};
    if (spec == "random")
        return seg::RandomFill{sub_seed(cfg.value("seed", std::uint64_t{0}), "filler")};
    if (spec.rfind("adversarial:", 0) == 0)
        return seg::AdversarialFill{fmt::read_file(spec.substr(12))};
    fail(Errc::BadArguments, "unknown filler: " + spec);
}

// inputs referenced by the config besides the primary file
std::vector<std::string> config_input_paths(const json& cfg) {
    std::vector<std::string> paths;
    if (cfg.contains("file")) paths.push_back(cfg["file"].get<std::string>());
    if (cfg.contains("listing") && !cfg["listing"].get<std::string>().empty())
        paths.push_back(cfg["listing"].get<std::string>());
    const std::string filler = cfg.value("filler", "zero");
    if (filler.rfind("adversarial:", 0) == 0) paths.push_back(filler.substr(12));
    const std::string det = cfg.value("detector", "");
    if (det.rfind("builtin:ngram:", 0) == 0) paths.push_back(det.substr(14));
    else if (det.rfind("builtin:planted:", 0) == 0) paths.push_back(det.substr(16));
    return paths;
}

std::unique_ptr<det::Detector> detector_from(const json& cfg) {
    auto d = det::make_detector(cfg["detector"].get<std::string>());
    if (const char* cache = std::getenv("BYTESLEUTH_CACHE"); cache && *cache)
        d = std::make_unique<det::CachingDetector>(std::move(d), cache);
    if (cfg.contains("threshold")) d->set_threshold(cfg["threshold"].get<double>());
    if (auto* ng = dynamic_cast<det::NgramDetector*>(d.get()))
        ng->set_jobs(cfg.value("jobs", 1));
    return d;
}

ex::KernelConfig kernel_from(const json& cfg) {
    ex::KernelConfig k;
    k.sigma = cfg.value("sigma", 0.0);
    return k;
}

std::vector<seg::BlockRecord> listing_from(const json& cfg) {
    if (!cfg.contains("listing") || cfg["listing"].get<std::string>().empty()) return {};
    return fmt::load_listing(cfg["listing"].get<std::string>());
}

atk::AttackConfig attack_config_from(const json& cfg) {
    atk::AttackConfig ac;
    ac.max_iterations = cfg.value("max_iter", 200);
    ac.size_budget_fraction = cfg.value("budget", 0.05);
    ac.chunk = cfg.value("chunk", seg::kDefaultChunk);
    if (cfg.contains("branch") || cfg.contains("beta"))
        ac.fastlsm = lsm::FastLsmConfig{cfg.value("branch", std::size_t{2}),
                                        cfg.value("beta", std::size_t{1024}),
                                        parse_filler(cfg)};
    ac.filler = parse_filler(cfg);
    ac.seed = cfg.value("seed", std::uint64_t{0});
    ac.ridge = cfg.value("ridge", ex::kDefaultRidge);
    ac.kernel = kernel_from(cfg);
    ac.samples = cfg.value("samples", std::size_t{0});
    ac.keep_prob = cfg.value("keep_prob", ex::kDefaultKeepProb);
    ac.listing = listing_from(cfg);
    ac.jobs = cfg.value("jobs", 1);
    return ac;
}

json round_record(const atk::AttackRound& r) {
    json rec = {{"index", r.index},
                {"action", tf::action_name(r.action)},
                {"score_before", r.score_before},
                {"score_after", r.score_after},
                {"size_so_far", r.size_so_far},
                {"queries_so_far", r.queries_so_far}};
    json tw = json::array();
    for (const auto& [i, w] : r.top_weights) tw.push_back(json::array({i, w}));
    rec["top_weights"] = tw;
    rec["chosen_region"] = r.chosen_region.length() > 0
                               ? json::array({r.chosen_region.begin, r.chosen_region.end})
                               : json();
    return rec;
}

json plans_json(const std::vector<vf::PlanOutline>& plans) {
    json out = json::array();
    for (const vf::PlanOutline& p : plans) {
        json e = {{"kind", tf::action_name(p.kind)},
                  {"new_section_name", p.new_section_name}};
        e["target"] = p.target ? json::array({p.target->begin, p.target->end}) : json();
        out.push_back(e);
    }
    return out;
}

std::vector<vf::PlanOutline> plans_from_json(const json& j) {
    if (!j.is_array()) fail(Errc::IoError, "plan log must be a JSON array");
    std::vector<vf::PlanOutline> plans;
    for (const json& e : j) {
        vf::PlanOutline p;
        const std::string kind = e.value("kind", "");
        if (kind == "append") p.kind = tf::ActionKind::Append;
        else if (kind == "disp") p.kind = tf::ActionKind::Disp;
        else if (kind == "datadisp") p.kind = tf::ActionKind::DataDisp;
        else fail(Errc::IoError, "unknown plan kind: " + kind);
        if (e.contains("target") && e["target"].is_array())
            p.target = ByteRange{e["target"][0].get<std::size_t>(),
                                 e["target"][1].get<std::size_t>()};
        p.new_section_name = e.value("new_section_name", "");
        plans.push_back(std::move(p));
    }
    return plans;
}

// chunk-grid map with pixels labeled by the containing section when the
// input parses as PE32; headers and slack get a placeholder label
seg::SuperpixelMap labeled_map(const Bytes& bytes, const json& cfg) {
    seg::SuperpixelMap map;
    const std::vector<seg::BlockRecord> listing = listing_from(cfg);
    if (!listing.empty())
        map = seg::segment_from_listing(listing, bytes.size());
    else
        map = seg::segment_by_offset(bytes.size(), cfg.value("chunk", seg::kDefaultChunk));
    try {
        const pe::PeImage image = pe::parse_pe(bytes);
        for (seg::Superpixel& p : map.pixels) {
            const pe::SectionRecord* s = image.section_containing_offset(p.start);
            p.label = s ? s->name_str() : std::string("(unmapped)");
        }
    } catch (const Error&) {
        // raw input: pixels stay unlabeled, the section report is skipped
    }
    return map;
}

int run_detect(const json& cfg, const std::string& out_dir) {
    const std::string file = cfg["file"].get<std::string>();
    const Bytes bytes = fmt::read_file(file);
    auto d = detector_from(cfg);
    const double score = d->score(bytes);
    std::printf("score: %.6f\n", score);
    std::printf("verdict: %s\n", score >= d->threshold() ? "malware" : "benign");
    std::printf("queries: %llu\n", static_cast<unsigned long long>(d->queries()));
    emit_manifest("detect", cfg, config_input_paths(cfg), {}, out_dir);
    return 0;
}

int run_explain(const json& cfg, const std::string& out_dir) {
    const std::string file = cfg["file"].get<std::string>();
    const Bytes bytes = fmt::read_file(file);
    const seg::SuperpixelMap map = labeled_map(bytes, cfg);
    auto d = detector_from(cfg);

    const std::size_t samples = cfg.value("samples", std::size_t{0});
    const ex::LinearExplanation e = ex::explain_instance(
        bytes, map, *d, parse_filler(cfg), kernel_from(cfg),
        samples ? samples : ex::default_sample_count(map.size()),
        cfg.value("ridge", ex::kDefaultRidge), cfg.value("seed", std::uint64_t{0}),
        cfg.value("jobs", 1), cfg.value("keep_prob", ex::kDefaultKeepProb));

    fs::create_directories(out_dir);

    std::string weights = "pixel,start,end,label,weight\n";
    for (std::size_t i = 0; i < map.size(); ++i) {
        const seg::Superpixel& p = map.pixels[i];
        weights += std::to_string(i) + "," + std::to_string(p.start) + "," +
                   std::to_string(p.start + p.length) + "," + p.label.value_or("") + "," +
                   fmt_g17(e.weights[i]) + "\n";
    }
    fmt::write_text((fs::path(out_dir) / "weights.csv").string(), weights);

    const std::vector<double> hist = ex::weight_histogram(e, ex::kDefaultHistogramBuckets);
    std::string histogram = "bucket_lo,bucket_hi,fraction\n";
    for (std::size_t i = 0; i < hist.size(); ++i)
        histogram += fmt_g(ex::kDefaultHistogramBuckets[i].first) + "," +
                     fmt_g(ex::kDefaultHistogramBuckets[i].second) + "," + fmt_g17(hist[i]) +
                     "\n";
    fmt::write_text((fs::path(out_dir) / "histogram.csv").string(), histogram);

    std::string sections = "section,weight,cumulative_share\n";
    const bool all_labeled =
        std::all_of(map.pixels.begin(), map.pixels.end(),
                    [](const seg::Superpixel& p) { return p.label.has_value(); });
    if (all_labeled && map.size() > 0) {
        const std::map<std::string, double> summary = ex::section_weight_summary(e, map);
        std::vector<std::pair<std::string, double>> rows(summary.begin(), summary.end());
        std::sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
            if (a.second != b.second) return a.second > b.second;
            return a.first < b.first;
        });
        double total = 0.0;
        for (const auto& [name, w] : rows) total += w;
        double acc = 0.0;
        for (const auto& [name, w] : rows) {
            acc += w;
            sections += name + "," + fmt_g17(w) + "," +
                        fmt_g17(total > 0.0 ? acc / total : 0.0) + "\n";
        }
    }
    fmt::write_text((fs::path(out_dir) / "sections.csv").string(), sections);

    std::size_t arg = 0;
    for (std::size_t i = 1; i < e.weights.size(); ++i)
        if (std::abs(e.weights[i]) > std::abs(e.weights[arg])) arg = i;
    std::printf("pixels: %zu\n", map.size());
    std::printf("intercept: %.6f\n", e.intercept);
    if (!e.weights.empty())
        std::printf("argmax: pixel %zu [%zu, %zu) weight %.6f\n", arg, map.pixels[arg].start,
                    map.pixels[arg].start + map.pixels[arg].length, e.weights[arg]);
    std::printf("queries: %llu\n", static_cast<unsigned long long>(d->queries()));

    emit_manifest("explain", cfg, config_input_paths(cfg),
                  {"weights.csv", "histogram.csv", "sections.csv"}, out_dir);
    return 0;
}

int run_fastlsm(const json& cfg, const std::string& out_dir) {
    const std::string file = cfg["file"].get<std::string>();
    const Bytes bytes = fmt::read_file(file);
    auto d = detector_from(cfg);
    const lsm::FastLsmConfig fc{cfg.value("branch", std::size_t{2}),
                                cfg.value("beta", std::size_t{1024}), parse_filler(cfg)};
    const lsm::HotRegion hot =
        lsm::fast_lsm(bytes, *d, fc, cfg.value("seed", std::uint64_t{0}));

    const json rec = {{"start", hot.start},
                      {"end", hot.end},
                      {"drop", hot.drop},
                      {"queries", hot.queries_used}};
    std::cout << rec.dump() << "\n";
    std::printf("detector_queries: %llu\n", static_cast<unsigned long long>(d->queries()));

    std::vector<std::string> outputs;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        fmt::write_text((fs::path(out_dir) / "hot_region.json").string(), rec.dump(2) + "\n");
        outputs.push_back("hot_region.json");
    }
    emit_manifest("fastlsm", cfg, config_input_paths(cfg), outputs, out_dir);
    return 0;
}

// final artifact is re-verified against the pristine input before anything
// is written; an unverified binary is never emitted
bool final_artifact_verified(const Bytes& original, const atk::AttackTrace& trace) {
    bool all_append = true;
    for (const vf::PlanOutline& p : trace.plans)
        all_append = all_append && p.kind == tf::ActionKind::Append;
    try {
        const pe::PeImage orig = pe::parse_pe(original);
        const pe::PeImage final_image = pe::parse_pe(trace.final_bytes);
        return vf::verify_preservation(orig, final_image, trace.plans).reconstructed_ok;
    } catch (const Error&) {
        return all_append && trace.final_bytes.size() >= original.size() &&
               std::equal(original.begin(), original.end(), trace.final_bytes.begin());
    }
}

int run_attack(const json& cfg, const std::string& out_dir) {
    const std::string file = cfg["file"].get<std::string>();
    const Bytes bytes = fmt::read_file(file);
    auto d = detector_from(cfg);
    const atk::AttackConfig ac = attack_config_from(cfg);

    atk::AttackTrace trace;
    try {
        trace = atk::run_attack(bytes, *d, ac);
    } catch (const Error& e) {
        if (e.code() == Errc::UnsupportedBinary) {
            std::fprintf(stderr, "error: %s\n", e.what());
            return 4;
        }
        throw;
    }

    fs::create_directories(out_dir);
    std::string jsonl;
    for (const atk::AttackRound& r : trace.rounds) jsonl += round_record(r).dump() + "\n";
    fmt::write_text((fs::path(out_dir) / "trace.jsonl").string(), jsonl);
    fmt::write_text((fs::path(out_dir) / "plans.json").string(),
                    plans_json(trace.plans).dump(2) + "\n");

    std::vector<std::string> outputs = {"trace.jsonl", "plans.json"};
    if (trace.outcome == atk::Outcome::Evaded) {
        if (!final_artifact_verified(bytes, trace))
            fail(Errc::InvariantViolation, "final artifact failed verification, not writing it");
        fmt::write_file((fs::path(out_dir) / "evaded.bin").string(), trace.final_bytes);
        outputs.push_back("evaded.bin");
    }

    std::printf("outcome: %s\n", atk::outcome_name(trace.outcome));
    std::printf("rounds: %zu\n", trace.rounds.size());
    std::printf("queries: %llu\n", static_cast<unsigned long long>(trace.total_queries));
    std::printf("original_size: %zu\n", bytes.size());
    std::printf("final_size: %zu\n", trace.final_bytes.size());
    if (trace.outcome == atk::Outcome::Evaded)
        std::printf("output: %s\n", (fs::path(out_dir) / "evaded.bin").string().c_str());

    emit_manifest("attack", cfg, config_input_paths(cfg), outputs, out_dir);
    switch (trace.outcome) {
        case atk::Outcome::Evaded:
        case atk::Outcome::AlreadyBenign: return 0;
        case atk::Outcome::IterationsExhausted: return 2;
        case atk::Outcome::BudgetExceeded: return 3;
    }
    return 2;
}

int run_verify(const json& cfg, const std::string& out_dir) {
    const Bytes original = fmt::read_file(cfg["original"].get<std::string>());
    const Bytes transformed = fmt::read_file(cfg["transformed"].get<std::string>());
    const std::vector<vf::PlanOutline> plans = plans_from_json(
        json::parse(fmt::read_file(cfg["plans"].get<std::string>()), nullptr, true));

    vf::VerificationReport report;
    bool raw_mode = false;
    try {
        const pe::PeImage orig = pe::parse_pe(original);
        const pe::PeImage trans = pe::parse_pe(transformed);
        report = vf::verify_preservation(orig, trans, plans);
    } catch (const Error&) {
        raw_mode = true;
        bool all_append = true;
        for (const vf::PlanOutline& p : plans)
            all_append = all_append && p.kind == tf::ActionKind::Append;
        report.reconstructed_ok = all_append && transformed.size() >= original.size() &&
                                  std::equal(original.begin(), original.end(),
                                             transformed.begin());
        if (!report.reconstructed_ok)
            report.failure = all_append ? "transformed bytes do not extend the original"
                                        : "raw inputs support only append-only plans";
    }

    std::printf("reconstructed_ok: %s\n", report.reconstructed_ok ? "true" : "false");
    if (!raw_mode) {
        std::printf("exit_va: 0x%08x\n", report.exit_va);
        std::printf("steps: %llu\n", static_cast<unsigned long long>(report.steps));
    }
    std::printf("mismatches: %zu\n", report.mismatches.size());
    for (std::size_t i = 0; i < report.mismatches.size() && i < 8; ++i)
        std::printf("  va 0x%08x expected %02x found %02x\n", report.mismatches[i].va,
                    report.mismatches[i].expected, report.mismatches[i].found);
    if (!report.failure.empty()) std::printf("failure: %s\n", report.failure.c_str());

    emit_manifest("verify", cfg,
                  {cfg["original"].get<std::string>(), cfg["transformed"].get<std::string>(),
                   cfg["plans"].get<std::string>()},
                  {}, out_dir);
    return report.reconstructed_ok ? 0 : 1;
}

std::vector<std::string> dir_files_sorted(const std::string& dir) {
    std::vector<std::string> files;
    if (!fs::is_directory(dir)) fail(Errc::IoError, "not a directory: " + dir);
    for (const fs::directory_entry& e : fs::directory_iterator(dir))
        if (e.is_regular_file()) files.push_back(e.path().string());
    std::sort(files.begin(), files.end());
    return files;
}

int run_train(const json& cfg, const std::string& out_dir) {
    const std::vector<std::string> mal_files =
        dir_files_sorted(cfg["malware_dir"].get<std::string>());
    const std::vector<std::string> ben_files =
        dir_files_sorted(cfg["benign_dir"].get<std::string>());
    std::vector<Bytes> malware, benign;
    for (const std::string& p : mal_files) malware.push_back(fmt::read_file(p));
    for (const std::string& p : ben_files) benign.push_back(fmt::read_file(p));

    const det::NgramModel model =
        det::train_ngram(malware, benign, cfg.value("n", std::size_t{4}),
                         cfg.value("epochs", 8), cfg.value("rate", 0.5),
                         cfg.value("seed", std::uint64_t{0}));

    fs::create_directories(out_dir);
    fmt::save_ngram_model(model, (fs::path(out_dir) / "model.json").string());

    const det::NgramDetector d(model);
    std::size_t correct = 0;
    for (const Bytes& b : malware) correct += d.classify(b) ? 1 : 0;
    for (const Bytes& b : benign) correct += d.classify(b) ? 0 : 1;
    const std::size_t total = malware.size() + benign.size();
    std::printf("grams: %zu\n", model.weights.size());
    std::printf("accuracy: %.6f (%zu/%zu)\n",
                total ? static_cast<double>(correct) / static_cast<double>(total) : 0.0, correct,
                total);

    std::vector<std::string> inputs = mal_files;
    inputs.insert(inputs.end(), ben_files.begin(), ben_files.end());
    emit_manifest("train-detector", cfg, inputs, {"model.json"}, out_dir);
    return 0;
}

int run_baseline(const json& cfg, const std::string& out_dir) {
    const std::string file = cfg["file"].get<std::string>();
    const Bytes bytes = fmt::read_file(file);
    auto d = detector_from(cfg);
    const atk::AttackConfig ac = attack_config_from(cfg);
    atk::BaselineReport report;
    try {
        report = atk::run_random_baseline(bytes, *d, ac, cfg.value("variants", 20));
    } catch (const Error& e) {
        if (e.code() == Errc::UnsupportedBinary) {
            std::fprintf(stderr, "error: %s\n", e.what());
            return 4;
        }
        throw;
    }

    std::string csv = "variants,flips,success,first_flip,size_growth,queries\n";
    csv += std::to_string(report.variants_tried) + "," + std::to_string(report.flips) + "," +
           (report.success ? "1" : "0") + "," +
           (report.first_flip ? std::to_string(*report.first_flip) : "") + "," +
           fmt_g17(report.flip_size_growth) + "," + std::to_string(report.total_queries) + "\n";
    std::fputs(csv.c_str(), stdout);

    std::vector<std::string> outputs;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        fmt::write_text((fs::path(out_dir) / "baseline.csv").string(), csv);
        outputs.push_back("baseline.csv");
    }
    emit_manifest("baseline", cfg, config_input_paths(cfg), outputs, out_dir);
    return 0;
}

int run_compare(const json& cfg, const std::string& out_dir) {
    const std::string file = cfg["file"].get<std::string>();
    const Bytes bytes = fmt::read_file(file);
    auto d = detector_from(cfg);
    const std::vector<atk::StrategyResult> rows =
        atk::compare_strategies(bytes, *d, attack_config_from(cfg));

    std::string csv = "strategy,success,rounds,queries,size_growth\n";
    for (const atk::StrategyResult& r : rows)
        csv += r.name + "," + (r.success ? "1" : "0") + "," + std::to_string(r.rounds) + "," +
               std::to_string(r.queries) + "," + fmt_g17(r.size_growth) + "\n";
    std::fputs(csv.c_str(), stdout);

    std::vector<std::string> outputs;
    if (!out_dir.empty()) {
        fs::create_directories(out_dir);
        fmt::write_text((fs::path(out_dir) / "comparison.csv").string(), csv);
        outputs.push_back("comparison.csv");
    }
    emit_manifest("compare", cfg, config_input_paths(cfg), outputs, out_dir);
    return 0;
}

int run_make_fixture(const json& cfg, const std::string& out_dir) {
    const Bytes bytes = pe::make_minimal_pe(cfg.value("seed", std::uint64_t{0}));
    fs::create_directories(out_dir);
    const std::string path = (fs::path(out_dir) / "fixture.bin").string();
    fmt::write_file(path, bytes);
    std::printf("wrote %s (%zu bytes)\n", path.c_str(), bytes.size());
    emit_manifest("make-fixture", cfg, {}, {"fixture.bin"}, out_dir);
    return 0;
}

int dispatch(const std::string& command, const json& cfg, const std::string& out_dir) {
    if (command == "detect") return run_detect(cfg, out_dir);
    if (command == "explain") return run_explain(cfg, out_dir);
    if (command == "fastlsm") return run_fastlsm(cfg, out_dir);
    if (command == "attack") return run_attack(cfg, out_dir);
    if (command == "verify") return run_verify(cfg, out_dir);
    if (command == "train-detector") return run_train(cfg, out_dir);
    if (command == "baseline") return run_baseline(cfg, out_dir);
    if (command == "compare") return run_compare(cfg, out_dir);
    if (command == "make-fixture") return run_make_fixture(cfg, out_dir);
    fail(Errc::BadArguments, "manifest names an unknown command: " + command);
}

int run_replay(const std::string& manifest_path, const std::string& out_dir) {
    const Bytes raw = fmt::read_file(manifest_path);
    const json manifest = json::parse(raw.begin(), raw.end(), nullptr, false);
    if (manifest.is_discarded() || !manifest.is_object() || !manifest.contains("command") ||
        !manifest.contains("config"))
        fail(Errc::IoError, "not a run manifest: " + manifest_path);
    if (manifest.value("tool", "") != kToolVersion)
        fail(Errc::BadArguments, "manifest was written by \"" + manifest.value("tool", "") +
                                     "\", this is " + kToolVersion);
    for (const json& input : manifest.value("inputs", json::array())) {
        const json now = digest_of(input["path"].get<std::string>());
        if (now["fnv1a64"] != input["fnv1a64"] || now["size"] != input["size"])
            fail(Errc::IoError,
                 "input changed since the manifest was written: " +
                     input["path"].get<std::string>());
    }
    return dispatch(manifest["command"].get<std::string>(), manifest["config"], out_dir);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"black-box PE32 detector explanation and evasion toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    // shared option storage; each subcommand copies what it declared into its
    // config snapshot so manifests carry exactly the effective settings
    std::string file, detector_spec, listing, filler = "zero", out_dir;
    std::string original, transformed, plans, malware_dir, benign_dir, manifest_path;
    double threshold = 0.0, keep_prob = ex::kDefaultKeepProb, ridge = ex::kDefaultRidge;
    double sigma = 0.0, budget = 0.05, rate = 0.5;
    std::size_t chunk = seg::kDefaultChunk, samples = 0, branch = 2, beta = 1024, gram_n = 4;
    int max_iter = 200, jobs = 1, variants = 20, epochs = 8;
    std::uint64_t seed = 0;

    auto add_detector = [&](CLI::App* cmd) {
        cmd->add_option("--detector", detector_spec,
                        "detector spec: builtin:ngram:<file>, builtin:planted:<file>, "
                        "proc:<command>, http:<url>, optional @<threshold>")
            ->required();
        cmd->add_option("--threshold", threshold, "override the decision threshold");
        cmd->add_option("--jobs", jobs, "max concurrent detector queries");
    };
    auto add_sampling = [&](CLI::App* cmd) {
        cmd->add_option("--chunk", chunk, "superpixel size in bytes");
        cmd->add_option("--samples", samples, "perturbation samples (0: max(4l,256))");
        cmd->add_option("--keep-prob", keep_prob, "per-bit keep probability");
        cmd->add_option("--ridge", ridge, "ridge penalty");
        cmd->add_option("--sigma", sigma, "kernel width (0: 0.75*sqrt(l))");
        cmd->add_option("--filler", filler, "occlusion filler: zero|random|adversarial:<file>");
        cmd->add_option("--listing", listing, "basic-block listing JSON");
        cmd->add_option("--seed", seed, "root seed");
    };

    CLI::App* c_detect = app.add_subcommand("detect", "score one file");
    c_detect->add_option("file", file)->required()->check(CLI::ExistingFile);
    add_detector(c_detect);
    c_detect->add_option("--seed", seed, "root seed");
    c_detect->add_option("--out", out_dir, "output directory for the manifest");

    CLI::App* c_explain = app.add_subcommand("explain", "fit a local linear surrogate");
    c_explain->add_option("file", file)->required()->check(CLI::ExistingFile);
    add_detector(c_explain);
    add_sampling(c_explain);
    c_explain->add_option("--out", out_dir, "output directory")->required();

    CLI::App* c_fastlsm = app.add_subcommand("fastlsm", "hierarchical hot-region search");
    c_fastlsm->add_option("file", file)->required()->check(CLI::ExistingFile);
    add_detector(c_fastlsm);
    c_fastlsm->add_option("--branch", branch, "branching factor n");
    c_fastlsm->add_option("--beta", beta, "stop size in bytes");
    c_fastlsm->add_option("--filler", filler, "occlusion filler");
    c_fastlsm->add_option("--seed", seed, "root seed");
    c_fastlsm->add_option("--out", out_dir, "output directory");

    CLI::App* c_attack = app.add_subcommand("attack", "guided evasion attack");
    c_attack->add_option("file", file)->required()->check(CLI::ExistingFile);
    add_detector(c_attack);
    add_sampling(c_attack);
    c_attack->add_option("--budget", budget, "size growth budget fraction");
    c_attack->add_option("--max-iter", max_iter, "iteration cap");
    c_attack->add_option("--branch", branch, "use region search with this branching factor");
    c_attack->add_option("--beta", beta, "region search stop size");
    c_attack->add_option("--out", out_dir, "output directory")->required();

    CLI::App* c_verify = app.add_subcommand("verify", "check functionality preservation");
    c_verify->add_option("original", original)->required()->check(CLI::ExistingFile);
    c_verify->add_option("transformed", transformed)->required()->check(CLI::ExistingFile);
    c_verify->add_option("--plans", plans, "plan log JSON from an attack run")
        ->required()
        ->check(CLI::ExistingFile);
    c_verify->add_option("--out", out_dir, "output directory for the manifest");

    CLI::App* c_train = app.add_subcommand("train-detector", "train the byte-gram detector");
    c_train->add_option("--malware", malware_dir, "directory of malicious samples")
        ->required()
        ->check(CLI::ExistingDirectory);
    c_train->add_option("--benign", benign_dir, "directory of benign samples")
        ->required()
        ->check(CLI::ExistingDirectory);
    c_train->add_option("--n", gram_n, "gram length");
    c_train->add_option("--epochs", epochs, "training epochs");
    c_train->add_option("--rate", rate, "learning rate");
    c_train->add_option("--seed", seed, "root seed");
    c_train->add_option("--out", out_dir, "output directory")->required();

    CLI::App* c_baseline = app.add_subcommand("baseline", "random transformation baseline");
    c_baseline->add_option("file", file)->required()->check(CLI::ExistingFile);
    add_detector(c_baseline);
    add_sampling(c_baseline);
    c_baseline->add_option("--budget", budget, "size growth budget fraction");
    c_baseline->add_option("--variants", variants, "number of random variants");
    c_baseline->add_option("--out", out_dir, "output directory");

    CLI::App* c_compare = app.add_subcommand("compare", "guided vs random vs append-only");
    c_compare->add_option("file", file)->required()->check(CLI::ExistingFile);
    add_detector(c_compare);
    add_sampling(c_compare);
    c_compare->add_option("--budget", budget, "size growth budget fraction");
    c_compare->add_option("--max-iter", max_iter, "iteration cap per strategy");
    c_compare->add_option("--out", out_dir, "output directory");

    CLI::App* c_replay = app.add_subcommand("replay", "re-run a recorded manifest");
    c_replay->add_option("manifest", manifest_path)->required()->check(CLI::ExistingFile);
    c_replay->add_option("--out", out_dir, "output directory")->required();

    CLI::App* c_fixture = app.add_subcommand("make-fixture", "generate a synthetic PE32");
    c_fixture->add_option("--seed", seed, "generator seed");
    c_fixture->add_option("--out", out_dir, "output directory")->required();

    CLI11_PARSE(app, argc, argv);

    // only options the user actually set are snapshotted over the defaults,
    // so a manifest replays under future default changes too
    auto put = [&](json& cfg, CLI::App* cmd, const char* flag, const char* key, auto value) {
        if (cmd->count(flag) > 0) cfg[key] = value;
    };
    auto base_cfg = [&](CLI::App* cmd) {
        json cfg;
        cfg["file"] = file;
        cfg["detector"] = detector_spec;
        cfg["seed"] = seed;
        put(cfg, cmd, "--threshold", "threshold", threshold);
        put(cfg, cmd, "--jobs", "jobs", jobs);
        return cfg;
    };
    auto sampling_cfg = [&](json& cfg, CLI::App* cmd) {
        put(cfg, cmd, "--chunk", "chunk", chunk);
        put(cfg, cmd, "--samples", "samples", samples);
        put(cfg, cmd, "--keep-prob", "keep_prob", keep_prob);
        put(cfg, cmd, "--ridge", "ridge", ridge);
        put(cfg, cmd, "--sigma", "sigma", sigma);
        put(cfg, cmd, "--filler", "filler", filler);
        put(cfg, cmd, "--listing", "listing", listing);
    };

    try {
        if (c_detect->parsed()) return run_detect(base_cfg(c_detect), out_dir);
        if (c_explain->parsed()) {
            json cfg = base_cfg(c_explain);
            sampling_cfg(cfg, c_explain);
            return run_explain(cfg, out_dir);
        }
        if (c_fastlsm->parsed()) {
            json cfg = base_cfg(c_fastlsm);
            put(cfg, c_fastlsm, "--branch", "branch", branch);
            put(cfg, c_fastlsm, "--beta", "beta", beta);
            put(cfg, c_fastlsm, "--filler", "filler", filler);
            return run_fastlsm(cfg, out_dir);
        }
        if (c_attack->parsed()) {
            json cfg = base_cfg(c_attack);
            sampling_cfg(cfg, c_attack);
            put(cfg, c_attack, "--budget", "budget", budget);
            put(cfg, c_attack, "--max-iter", "max_iter", max_iter);
            put(cfg, c_attack, "--branch", "branch", branch);
            put(cfg, c_attack, "--beta", "beta", beta);
            return run_attack(cfg, out_dir);
        }
        if (c_verify->parsed()) {
            const json cfg = {{"original", original}, {"transformed", transformed},
                              {"plans", plans}};
            return run_verify(cfg, out_dir);
        }
        if (c_train->parsed()) {
            json cfg = {{"malware_dir", malware_dir}, {"benign_dir", benign_dir},
                        {"seed", seed}};
            put(cfg, c_train, "--n", "n", gram_n);
            put(cfg, c_train, "--epochs", "epochs", epochs);
            put(cfg, c_train, "--rate", "rate", rate);
            return run_train(cfg, out_dir);
        }
        if (c_baseline->parsed()) {
            json cfg = base_cfg(c_baseline);
            sampling_cfg(cfg, c_baseline);
            put(cfg, c_baseline, "--budget", "budget", budget);
            put(cfg, c_baseline, "--variants", "variants", variants);
            return run_baseline(cfg, out_dir);
        }
        if (c_compare->parsed()) {
            json cfg = base_cfg(c_compare);
            sampling_cfg(cfg, c_compare);
            put(cfg, c_compare, "--budget", "budget", budget);
            put(cfg, c_compare, "--max-iter", "max_iter", max_iter);
            return run_compare(cfg, out_dir);
        }
        if (c_replay->parsed()) return run_replay(manifest_path, out_dir);
        if (c_fixture->parsed()) return run_make_fixture(json{{"seed", seed}}, out_dir);
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
