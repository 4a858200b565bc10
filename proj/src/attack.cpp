#include "bytesleuth/attack.hpp"

#include <algorithm>
#include <cmath>

namespace bytesleuth::atk {

const char* outcome_name(Outcome o) {
    switch (o) {
        case Outcome::Evaded: return "Evaded";
        case Outcome::BudgetExceeded: return "BudgetExceeded";
        case Outcome::IterationsExhausted: return "IterationsExhausted";
        case Outcome::AlreadyBenign: return "AlreadyBenign";
    }
    return "?";
}

std::vector<std::size_t> select_perturbation(const ex::LinearExplanation& e,
                                             const seg::SuperpixelMap& map,
                                             const seg::InterpretableVector& current_v,
                                             double threshold) {
    if (e.weights.size() != map.pixels.size() || current_v.size() != map.pixels.size())
        fail(Errc::LengthMismatch, "explanation, map and vector sizes disagree");

    double predicted = e.intercept;
    std::vector<std::size_t> candidates;
    for (std::size_t i = 0; i < e.weights.size(); ++i) {
        if (!current_v.bits[i]) continue;
        predicted += e.weights[i];
        if (e.weights[i] > 0.0) candidates.push_back(i);
    }
    if (candidates.empty())
        fail(Errc::NoPositiveWeights, "surrogate has no malware-pushing pixel to remove");

    std::sort(candidates.begin(), candidates.end(), [&](std::size_t a, std::size_t b) {
        if (e.weights[a] != e.weights[b]) return e.weights[a] > e.weights[b];
        return a < b;
    });

    std::vector<std::size_t> removed;
    for (std::size_t i : candidates) {
        if (predicted < threshold) break;
        predicted -= e.weights[i];
        removed.push_back(i);
    }
    return removed;
}

namespace {

struct AttackMap {
    seg::SuperpixelMap map;
    std::vector<std::uint8_t> from_listing;
};

// Sections chunked into pixels; injected stub sections are not offered back
// to the search. Listing blocks replace the chunk grid inside the executable
// sections they fall in.
AttackMap build_attack_map(const pe::PeImage& image, const AttackConfig& cfg) {
    struct Entry {
        seg::Superpixel pixel;
        bool listed;
    };
    std::vector<Entry> entries;
    for (const pe::SectionRecord& s : image.sections) {
        if (s.raw_size == 0) continue;
        const std::string name = s.name_str();
        if (name.rfind(".bsx", 0) == 0) continue;
        bool listed_section = false;
        if (s.executable() && !cfg.listing.empty()) {
            for (const seg::BlockRecord& blk : cfg.listing) {
                if (blk.length == 0) continue;
                if (blk.start >= s.raw_offset &&
                    blk.start + blk.length <= static_cast<std::size_t>(s.raw_offset) + s.raw_size) {
                    entries.push_back({{blk.start, blk.length, name}, true});
                    listed_section = true;
                }
            }
        }
        if (!listed_section) {
            for (std::size_t off = 0; off < s.raw_size; off += cfg.chunk)
                entries.push_back(
                    {{s.raw_offset + off,
                      std::min(cfg.chunk, static_cast<std::size_t>(s.raw_size) - off), name},
                     false});
        }
    }
    std::sort(entries.begin(), entries.end(),
              [](const Entry& a, const Entry& b) { return a.pixel.start < b.pixel.start; });

    AttackMap out;
    out.map.file_length = image.serialized_size();
    for (Entry& e : entries) {
        out.map.pixels.push_back(std::move(e.pixel));
        out.from_listing.push_back(e.listed ? 1 : 0);
    }
    return out;
}

bool overlaps_any(ByteRange r, const std::vector<ByteRange>& ranges) {
    for (const ByteRange& x : ranges)
        if (r.overlaps(x)) return true;
    return false;
}

// merge adjacent selected pixels into contiguous runs and keep the run with
// the largest summed weight; one region is transformed per round
ByteRange best_region(const AttackMap& am, const std::vector<std::size_t>& selected,
                      const ex::LinearExplanation& e, bool* all_listed) {
    std::vector<std::size_t> order = selected;
    std::sort(order.begin(), order.end());

    ByteRange best{0, 0};
    double best_weight = 0.0;
    bool best_listed = false;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        double weight = e.weights[order[i]];
        bool listed = am.from_listing[order[i]] != 0;
        while (j + 1 < order.size() && order[j + 1] == order[j] + 1 &&
               am.map.pixels[order[j + 1]].start == am.map.pixels[order[j]].range().end) {
            ++j;
            weight += e.weights[order[j]];
            listed = listed && am.from_listing[order[j]] != 0;
        }
        const ByteRange run{am.map.pixels[order[i]].start, am.map.pixels[order[j]].range().end};
        if (best.length() == 0 || weight > best_weight) {
            best = run;
            best_weight = weight;
            best_listed = listed;
        }
        i = j + 1;
    }
    *all_listed = best_listed;
    return best;
}

// true iff the region is exactly tiled by consecutive listed pixels
bool covered_by_listing(const AttackMap& am, ByteRange region) {
    std::size_t cursor = region.begin;
    for (std::size_t i = 0; i < am.map.pixels.size() && cursor < region.end; ++i) {
        const seg::Superpixel& p = am.map.pixels[i];
        if (p.start != cursor) continue;
        if (am.from_listing[i] == 0) return false;
        cursor = p.range().end;
    }
    return cursor == region.end && region.length() > 0;
}

tf::ActionKind choose_action(const pe::PeImage& image, ByteRange region, bool listed,
                             bool can_disp, bool can_datadisp) {
    const pe::SectionRecord* sec = image.section_containing_offset(region.begin);
    const bool mapped =
        sec != nullptr && region.end <= static_cast<std::size_t>(sec->raw_offset) + sec->raw_size;
    if (mapped && sec->executable() && can_disp && listed && region.length() >= 5)
        return tf::ActionKind::Disp;
    if (mapped && can_datadisp) return tf::ActionKind::DataDisp;
    return tf::ActionKind::Append;
}

std::vector<std::pair<std::size_t, double>> top_weights(const ex::LinearExplanation& e,
                                                        std::size_t k) {
    std::vector<std::size_t> order(e.weights.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (e.weights[a] != e.weights[b]) return e.weights[a] > e.weights[b];
        return a < b;
    });
    std::vector<std::pair<std::size_t, double>> out;
    for (std::size_t i = 0; i < order.size() && i < k; ++i)
        out.emplace_back(order[i], e.weights[order[i]]);
    return out;
}

// appended payload: benign-pushing mined patterns when any exist, zero bytes
// otherwise
Bytes build_append_payload(const std::vector<ex::ExplainedInstance>& history, double cutoff,
                           std::size_t length) {
    Bytes payload;
    if (length == 0) return payload;
    std::vector<ex::AdversarialPattern> mined;
    if (!history.empty()) mined = ex::mine_adversarial_data(history, cutoff);
    std::vector<const ex::AdversarialPattern*> benign;
    for (const ex::AdversarialPattern& p : mined)
        if (p.weight < 0.0 && !p.data.empty()) benign.push_back(&p);
    std::stable_sort(benign.begin(), benign.end(),
                     [](const auto* a, const auto* b) { return a->weight < b->weight; });
    if (benign.empty()) {
        payload.assign(length, 0);
        return payload;
    }
    std::size_t k = 0;
    while (payload.size() < length) {
        for (std::uint8_t byte : benign[k % benign.size()]->data) {
            payload.push_back(byte);
            if (payload.size() == length) break;
        }
        ++k;
    }
    return payload;
}

}  // namespace

AttackTrace run_attack(ByteView b, const det::Detector& d, const AttackConfig& cfg) {
    if (cfg.max_iterations < 1) fail(Errc::InvariantViolation, "max_iterations must be >= 1");
    if (cfg.size_budget_fraction < 0.0 || cfg.size_budget_fraction > 1.0)
        fail(Errc::InvariantViolation, "budget fraction must lie in [0,1]");
    if (b.empty()) fail(Errc::UnsupportedBinary, "empty input");

    const std::uint64_t start_queries = d.queries();
    const double threshold = d.threshold();
    const std::size_t limit = static_cast<std::size_t>(
        std::floor((1.0 + cfg.size_budget_fraction) * static_cast<double>(b.size())));

    bool pe_mode = true;
    pe::PeImage original;
    try {
        original = pe::parse_pe(b);
    } catch (const Error&) {
        pe_mode = false;
    }
    const bool append_only_cfg = cfg.allow_append && !cfg.allow_disp && !cfg.allow_datadisp;
    if (!pe_mode && !append_only_cfg)
        fail(Errc::UnsupportedBinary, "input is not PE32; only append-only mode takes raw bytes");

    const bool relocated = pe_mode && original.has_relocations();
    const bool can_disp = pe_mode && cfg.allow_disp && !relocated;
    const bool can_datadisp = pe_mode && cfg.allow_datadisp && !relocated;
    if (!can_disp && !can_datadisp && !cfg.allow_append)
        fail(Errc::UnsupportedBinary, "no transformation family applies to this input");
    if (pe_mode && !cfg.listing.empty())
        seg::segment_from_listing(cfg.listing, b.size());  // validates the blocks

    AttackTrace trace;
    Bytes current_bytes(b.begin(), b.end());
    double score = d.score(current_bytes);
    if (score < threshold) {
        trace.outcome = Outcome::AlreadyBenign;
        trace.final_bytes = std::move(current_bytes);
        trace.total_queries = d.queries() - start_queries;
        return trace;
    }
    if (limit <= b.size()) {
        trace.outcome = Outcome::BudgetExceeded;
        trace.final_bytes = std::move(current_bytes);
        trace.total_queries = d.queries() - start_queries;
        return trace;
    }

    pe::PeImage current = original;
    std::vector<ByteRange> blacklist;
    std::vector<ex::ExplainedInstance> history;
    trace.outcome = Outcome::IterationsExhausted;

    for (int round = 1; round <= cfg.max_iterations; ++round) {
        AttackRound rec;
        rec.index = round;
        rec.score_before = score;
        rec.score_after = score;
        rec.size_so_far = current_bytes.size();

        ByteRange region{0, 0};
        bool region_listed = false;

        if (pe_mode) {
            const AttackMap am = build_attack_map(current, cfg);
            const std::size_t l = am.map.pixels.size();
            const bool use_fastlsm = cfg.fastlsm.has_value() || l > 512 || l == 0;
            if (use_fastlsm) {
                lsm::FastLsmConfig fc = cfg.fastlsm.value_or(
                    lsm::FastLsmConfig{2, cfg.chunk, cfg.filler});
                const lsm::HotRegion hot =
                    lsm::fast_lsm(current_bytes, d, fc,
                                  sub_seed(cfg.seed, "attack-fastlsm", static_cast<std::uint64_t>(round)));
                region = {hot.start, hot.end};
                region_listed = covered_by_listing(am, region);
            } else {
                const ex::LinearExplanation expl = ex::explain_instance(
                    current_bytes, am.map, d, cfg.filler, cfg.kernel,
                    cfg.samples ? cfg.samples : ex::default_sample_count(l), cfg.ridge,
                    sub_seed(cfg.seed, "attack-round", static_cast<std::uint64_t>(round)),
                    cfg.jobs, cfg.keep_prob);
                history.push_back({expl, am.map, current_bytes});
                rec.top_weights = top_weights(expl, 5);

                std::vector<std::size_t> selected;
                try {
                    selected = select_perturbation(expl, am.map,
                                                   seg::InterpretableVector::ones(l), threshold);
                } catch (const Error& e) {
                    if (e.code() != Errc::NoPositiveWeights) throw;
                }
                std::vector<std::size_t> usable;
                for (std::size_t i : selected)
                    if (!overlaps_any(am.map.pixels[i].range(), blacklist)) usable.push_back(i);
                if (!usable.empty()) region = best_region(am, usable, expl, &region_listed);
            }
            if (region.length() > 0 && overlaps_any(region, blacklist)) region = {0, 0};
        } else {
            const seg::SuperpixelMap map = seg::segment_by_offset(current_bytes.size(), cfg.chunk);
            if (map.pixels.size() <= 512) {
                const ex::LinearExplanation expl = ex::explain_instance(
                    current_bytes, map, d, cfg.filler, cfg.kernel,
                    cfg.samples ? cfg.samples : ex::default_sample_count(map.pixels.size()),
                    cfg.ridge,
                    sub_seed(cfg.seed, "attack-round", static_cast<std::uint64_t>(round)),
                    cfg.jobs, cfg.keep_prob);
                history.push_back({expl, map, current_bytes});
                rec.top_weights = top_weights(expl, 5);
            }
        }

        tf::ActionKind kind = tf::ActionKind::Append;
        if (pe_mode && region.length() > 0)
            kind = choose_action(current, region, region_listed, can_disp, can_datadisp);

        bool applied = false;
        if (pe_mode) {
            std::optional<tf::TransformPlan> plan;
            if (kind != tf::ActionKind::Append) {
                try {
                    plan = kind == tf::ActionKind::Disp
                               ? tf::plan_disp(current, region, cfg.filler)
                               : tf::plan_datadisp(current, region, cfg.filler);
                } catch (const Error&) {
                    blacklist.push_back(region);
                    rec.chosen_region = region;
                    rec.action = kind;
                    rec.queries_so_far = d.queries() - start_queries;
                    trace.rounds.push_back(std::move(rec));
                    continue;
                }
                if (plan->new_image.serialized_size() > limit) {
                    plan.reset();
                    kind = tf::ActionKind::Append;  // cheapest family still in budget
                }
            }
            if (!plan) {
                if (!cfg.allow_append) {
                    trace.outcome = Outcome::BudgetExceeded;
                    break;
                }
                const std::size_t room = limit - current_bytes.size();
                const std::size_t len = std::min(room, cfg.chunk);
                if (len == 0) {
                    trace.outcome = Outcome::BudgetExceeded;
                    break;
                }
                plan = tf::plan_append(current,
                                       build_append_payload(history, cfg.mine_cutoff, len));
            }

            std::vector<vf::PlanOutline> chain = trace.plans;
            chain.push_back(vf::outline_of(*plan));
            const vf::VerificationReport vrep =
                vf::verify_preservation(original, plan->new_image, chain);
            if (!vrep.reconstructed_ok) {
                if (region.length() > 0) blacklist.push_back(region);
                rec.chosen_region = region;
                rec.action = kind;
                rec.queries_so_far = d.queries() - start_queries;
                trace.rounds.push_back(std::move(rec));
                continue;
            }
            current = std::move(plan->new_image);
            current_bytes = pe::serialize(current);
            trace.plans = std::move(chain);
            applied = true;
        } else {
            const std::size_t room = limit - current_bytes.size();
            const std::size_t len = std::min(room, cfg.chunk);
            if (len == 0) {
                trace.outcome = Outcome::BudgetExceeded;
                break;
            }
            const Bytes payload = build_append_payload(history, cfg.mine_cutoff, len);
            current_bytes.insert(current_bytes.end(), payload.begin(), payload.end());
            trace.plans.push_back({tf::ActionKind::Append, std::nullopt, ""});
            applied = true;
        }

        if (applied) score = d.score(current_bytes);
        rec.chosen_region = region;
        rec.action = kind;
        rec.applied = applied;
        rec.score_after = score;
        rec.size_so_far = current_bytes.size();
        rec.queries_so_far = d.queries() - start_queries;
        trace.rounds.push_back(std::move(rec));

        if (applied && score < threshold) {
            trace.outcome = Outcome::Evaded;
            break;
        }
    }

    trace.final_bytes = std::move(current_bytes);
    trace.total_queries = d.queries() - start_queries;
    return trace;
}

BaselineReport run_random_baseline(ByteView b, const det::Detector& d, const AttackConfig& cfg,
                                   int variants) {
    if (variants < 0) fail(Errc::InvariantViolation, "variant count must be >= 0");
    const std::uint64_t start_queries = d.queries();

    pe::PeImage original;
    try {
        original = pe::parse_pe(b);
    } catch (const Error&) {
        fail(Errc::UnsupportedBinary, "random baseline needs a PE32 input");
    }
    const bool relocated = original.has_relocations();
    const bool can_disp = cfg.allow_disp && !relocated;
    const bool can_datadisp = cfg.allow_datadisp && !relocated;
    const std::size_t limit = static_cast<std::size_t>(
        std::floor((1.0 + cfg.size_budget_fraction) * static_cast<double>(b.size())));

    BaselineReport report;
    (void)d.score(b);
    const AttackMap am = build_attack_map(original, cfg);

    for (int v = 1; v <= variants; ++v) {
        Rng rng(sub_seed(cfg.seed, "baseline-variant", static_cast<std::uint64_t>(v)));
        pe::PeImage image = original;
        std::vector<vf::PlanOutline> chain;

        for (std::size_t i = 0; i < am.map.pixels.size(); ++i) {
            if (!rng.next_bernoulli(0.5)) continue;
            const seg::Superpixel& p = am.map.pixels[i];
            const ByteRange r = p.range();
            const tf::ActionKind kind =
                choose_action(image, r, am.from_listing[i] != 0, can_disp, can_datadisp);
            if (kind == tf::ActionKind::Append) continue;
            std::optional<tf::TransformPlan> plan;
            try {
                plan = kind == tf::ActionKind::Disp ? tf::plan_disp(image, r, cfg.filler)
                                                    : tf::plan_datadisp(image, r, cfg.filler);
            } catch (const Error&) {
                continue;
            }
            if (plan->new_image.serialized_size() > limit) continue;
            chain.push_back(vf::outline_of(*plan));
            image = std::move(plan->new_image);
        }

        ++report.variants_tried;
        if (!chain.empty()) {
            const vf::VerificationReport vr = vf::verify_preservation(original, image, chain);
            if (!vr.reconstructed_ok) continue;  // never query an unverified variant
        }
        const Bytes bytes = pe::serialize(image);
        const double s = d.score(bytes);
        if (s < d.threshold()) {
            ++report.flips;
            if (!report.first_flip) {
                report.first_flip = v;
                report.flip_size_growth =
                    static_cast<double>(bytes.size() - b.size()) / static_cast<double>(b.size());
            }
        }
    }

    report.success = report.flips >= 1;
    report.total_queries = d.queries() - start_queries;
    return report;
}

std::vector<StrategyResult> compare_strategies(ByteView b, const det::Detector& d,
                                               const AttackConfig& cfg) {
    auto growth = [&](const Bytes& final_bytes) {
        return (static_cast<double>(final_bytes.size()) - static_cast<double>(b.size())) /
               static_cast<double>(b.size());
    };

    std::vector<StrategyResult> rows;
    {
        const std::uint64_t q0 = d.queries();
        const AttackTrace t = run_attack(b, d, cfg);
        rows.push_back({"guided",
                        t.outcome == Outcome::Evaded || t.outcome == Outcome::AlreadyBenign,
                        static_cast<int>(t.rounds.size()), d.queries() - q0,
                        growth(t.final_bytes)});
    }
    {
        const std::uint64_t q0 = d.queries();
        const BaselineReport r = run_random_baseline(b, d, cfg, cfg.max_iterations);
        rows.push_back(
            {"random", r.success, r.variants_tried, d.queries() - q0, r.flip_size_growth});
    }
    {
        AttackConfig ac = cfg;
        ac.allow_disp = false;
        ac.allow_datadisp = false;
        ac.allow_append = true;
        const std::uint64_t q0 = d.queries();
        const AttackTrace t = run_attack(b, d, ac);
        rows.push_back({"append-only",
                        t.outcome == Outcome::Evaded || t.outcome == Outcome::AlreadyBenign,
                        static_cast<int>(t.rounds.size()), d.queries() - q0,
                        growth(t.final_bytes)});
    }
    return rows;
}

}  // namespace bytesleuth::atk
