// Copyright 2026 The ATS Authors
// SPDX-License-Identifier: Apache-2.0

#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "ats/flops.hpp"
#include "ats/parallel.hpp"
#include "ats/weights.hpp"

namespace ats::cli {

namespace fs = std::filesystem;
using nlohmann::json;

RunConfig run_config_from_json(const json& j) {
    if (j.value("schema", 0) != 1) throw FormatError("config: missing or unsupported schema");
    RunConfig rc;
    if (j.contains("arch")) rc.arch = arch_from_json(j["arch"]);
    if (j.contains("dataset")) {
        json d = j["dataset"];
        d["schema"] = 1;
        rc.dataset = manifest_from_json(d);
    }
    rc.dataset.image_size = rc.arch.image_size;
    if (j.contains("dataset") && j["dataset"].contains("image_size") &&
        j["dataset"]["image_size"].get<std::size_t>() != rc.arch.image_size) {
        throw FormatError("config: dataset.image_size disagrees with arch.image_size");
    }
    if (j.contains("train")) {
        const json& t = j["train"];
        rc.epochs = t.value("epochs", rc.epochs);
        rc.finetune_epochs = t.value("finetune_epochs", rc.finetune_epochs);
        rc.batch_size = t.value("batch_size", rc.batch_size);
        rc.base_lr = t.value("base_lr", rc.base_lr);
        rc.weight_decay = t.value("weight_decay", rc.weight_decay);
        rc.warmup_epochs = t.value("warmup_epochs", rc.warmup_epochs);
    }
    if (j.contains("ats")) {
        rc.ats = ats_from_json(j["ats"]);
        if (rc.ats->budget.empty()) rc.ats->budget = {rc.arch.num_patches()};
    }
    return rc;
}

RunConfig load_run_config(const fs::path& path) {
    std::ifstream is(path);
    if (!is) throw FormatError("config: cannot open " + path.string());
    try {
        return run_config_from_json(json::parse(is));
    } catch (const json::exception& e) {
        throw FormatError("config " + path.string() + ": " + e.what());
    }
}

namespace {

std::vector<std::string> split(const std::string& text, char sep) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, sep)) {
        item.erase(0, item.find_first_not_of(" \t"));
        item.erase(item.find_last_not_of(" \t") + 1);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

std::size_t parse_count(const std::string& s) {
    std::size_t used = 0;
    unsigned long v = 0;
    try {
        v = std::stoul(s, &used);
    } catch (const std::exception&) {
        used = 0;
    }
    if (used != s.size() || s.empty() || s.front() == '-') throw CLI::ValidationError("expected a count, got '" + s + "'");
    return v;
}

}  // namespace

std::vector<std::size_t> parse_index_list(const std::string& text) {
    if (text == "none") return {};
    std::vector<std::size_t> out;
    for (const auto& item : split(text, ',')) out.push_back(parse_count(item));
    return out;
}

std::vector<std::size_t> parse_budget(const std::string& text, std::size_t n) {
    std::vector<std::size_t> out;
    for (const auto& item : split(text, ',')) out.push_back(item == "N" || item == "n" ? n : parse_count(item));
    if (out.empty()) throw CLI::ValidationError("--k needs at least one budget");
    return out;
}

BudgetChoice resolve_mac_fraction(const Model<float>& model, const std::vector<ShapeSample>& samples, AtsConfig ats,
                                  double fraction, std::size_t threads, std::uint64_t seed_base) {
    if (!(fraction > 0.0)) throw ContractError("mac fraction must be positive");
    if (!ats.enabled()) throw ContractError("--mac-fraction needs ATS stages");
    const double baseline = static_cast<double>(baseline_macs(model.arch()).total_macs);
    std::map<std::size_t, double> cache;
    auto frac = [&](std::size_t k) {
        if (auto it = cache.find(k); it != cache.end()) return it->second;
        ats.budget = {k};
        const double f = evaluate(model, samples, ats, threads, seed_base).mean_macs / baseline;
        cache.emplace(k, f);
        return f;
    };
    const std::size_t n = model.arch().num_patches();
    if (frac(1) > fraction) return {1, frac(1)};
    if (frac(n) <= fraction) return {n, frac(n)};
    std::size_t lo = 1, hi = n;
    while (hi - lo > 1) {
        const std::size_t mid = lo + (hi - lo) / 2;
        if (frac(mid) <= fraction) lo = mid;
        else hi = mid;
    }
    return {lo, frac(lo)};
}

json eval_report(const EvalResult& result, const ArchConfig& arch, const AtsConfig& ats) {
    std::vector<double> macs;
    macs.reserve(result.images.size());
    for (const auto& r : result.images) macs.push_back(static_cast<double>(r.macs));
    std::sort(macs.begin(), macs.end());
    const double n = static_cast<double>(macs.size());
    double var = 0.0;
    for (double m : macs) var += (m - result.mean_macs) * (m - result.mean_macs);
    auto rank = [&](double q) {
        if (macs.empty()) return 0.0;
        const std::size_t i = static_cast<std::size_t>(std::ceil(q * n));
        return macs[std::min(macs.size() - 1, i == 0 ? 0 : i - 1)];
    };
    const double baseline = static_cast<double>(baseline_macs(arch).total_macs);
    json stages = json::array();
    for (std::size_t s = 0; s < ats.stages.size(); ++s) {
        std::map<std::size_t, std::size_t> hist;
        for (const auto& r : result.images) ++hist[r.kprime.at(s)];
        json bins = json::array();
        for (const auto& [k, c] : hist) bins.push_back({{"kprime", k}, {"count", c}});
        stages.push_back({{"block", ats.stages[s]},
                          {"budget", ats.budget_for(s)},
                          {"mean_kprime", result.mean_kprime.at(s)},
                          {"histogram", bins}});
    }
    return {{"schema", 1},
            {"images", result.images.size()},
            {"top1", result.top1},
            {"loss", result.loss},
            {"ats", to_json(ats)},
            {"macs",
             {{"baseline", baseline},
              {"mean", result.mean_macs},
              {"std", macs.empty() ? 0.0 : std::sqrt(var / n)},
              {"min", macs.empty() ? 0.0 : macs.front()},
              {"p50", rank(0.5)},
              {"p90", rank(0.9)},
              {"max", macs.empty() ? 0.0 : macs.back()},
              {"mean_fraction", result.mean_macs / baseline}}},
            {"stages", stages}};
}

namespace {

/// Flags shared by several subcommands.
struct Options {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    std::string data;
    std::string weights;
    std::string metrics;
    std::optional<std::size_t> epochs;
    std::optional<std::size_t> batch_size;
    std::optional<double> lr;
    std::optional<std::string> ats_stages;
    std::optional<std::string> k;
    std::optional<std::string> policy;
    std::optional<std::string> scoring;
    std::optional<std::string> inverse_rule;
    std::vector<double> mac_fraction;
    std::string split = "val";
    // sweep
    std::string policies = "inverse,topk";
    std::string scorings = "cls-vnorm";
    // masks
    std::vector<std::string> images;
    std::size_t count = 8;
    std::size_t pgm_preview = 0;
};

void add_config_flags(CLI::App* cmd, Options& o) {
    cmd->add_option("--config", o.config, "Run configuration JSON")->check(CLI::ExistingFile);
    cmd->add_option("--seed", o.seed, "Seed (model init, batch order, sampler streams)");
}

void add_ats_flags(CLI::App* cmd, Options& o) {
    cmd->add_option("--ats-stages", o.ats_stages, "Comma-separated block indices, or 'none'");
    cmd->add_option("--k", o.k, "Budget K: an integer, 'N', or one value per stage");
    cmd->add_option("--policy", o.policy, "inverse | topk | random")
        ->check(CLI::IsMember({"inverse", "topk", "random", "inverse_transform"}));
    cmd->add_option("--scoring", o.scoring, "cls-vnorm | cls | rowsum | random-token")
        ->check(CLI::IsMember({"cls-vnorm", "cls", "rowsum", "random-token", "cls_attn_vnorm", "cls_attn",
                               "rowsum_attn", "random_token"}));
    cmd->add_option("--inverse-rule", o.inverse_rule, "ceil | nearest")->check(CLI::IsMember({"ceil", "nearest"}));
}

RunConfig config_of(const Options& o) {
    RunConfig rc = o.config.empty() ? RunConfig{} : load_run_config(o.config);
    rc.dataset.image_size = rc.arch.image_size;
    return rc;
}

/// Sampler settings: config file, then defaults when `default_stages`, then flags.
AtsConfig ats_of(const Options& o, const RunConfig& rc, const ArchConfig& arch, bool default_stages,
                 bool use_k = true) {
    AtsConfig ats;
    if (rc.ats) ats = *rc.ats;
    else if (default_stages) ats = AtsConfig::defaults(arch);
    if (o.ats_stages) ats.stages = parse_index_list(*o.ats_stages);
    if (o.k && use_k) ats.budget = parse_budget(*o.k, arch.num_patches());
    if (ats.budget.empty()) ats.budget = {arch.num_patches()};
    if (o.policy) ats.policy = parse_policy(*o.policy);
    if (o.scoring) ats.scoring = parse_scoring(*o.scoring);
    if (o.inverse_rule) ats.rule = parse_inverse_rule(*o.inverse_rule);
    if (o.seed) ats.seed = *o.seed;
    ats.validate(arch);
    return ats;
}

Dataset data_of(const Options& o, const RunConfig& rc, const ArchConfig& arch) {
    Dataset d;
    if (!o.data.empty()) {
        const fs::path dir(o.data);
        std::ifstream is(dir / "manifest.json");
        if (!is) throw FormatError("dataset: cannot open " + (dir / "manifest.json").string());
        const DatasetManifest m = manifest_from_json(json::parse(is));
        if (m.image_size != arch.image_size) throw FormatError("dataset: image size disagrees with the model");
        d.train = load_samples(dir / "train.atsd");
        d.val = load_samples(dir / "val.atsd");
    } else {
        DatasetManifest m = rc.dataset;
        m.image_size = arch.image_size;
        d = generate(m);
    }
    return d;
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw FormatError("cannot write " + path.string());
    os << text;
    if (!os) throw FormatError("write failed: " + path.string());
}

std::string metrics_path(const Options& o) {
    if (!o.metrics.empty()) return o.metrics;
    fs::path p(o.out);
    return (p.parent_path() / (p.stem().string() + ".metrics.csv")).string();
}

TrainConfig train_config(const Options& o, const RunConfig& rc, std::size_t epochs, std::ostream& err) {
    TrainConfig tc;
    tc.epochs = o.epochs.value_or(epochs);
    tc.batch_size = o.batch_size.value_or(rc.batch_size);
    tc.base_lr = o.lr.value_or(rc.base_lr);
    tc.weight_decay = rc.weight_decay;
    tc.warmup_epochs = rc.warmup_epochs;
    tc.seed = o.seed.value_or(0);
    tc.log = [&err](const std::string& line) { err << line << '\n'; };
    return tc;
}

int cmd_dataset(const Options& o, std::ostream& out) {
    RunConfig rc = config_of(o);
    if (o.seed) rc.dataset.seed = *o.seed;
    const Dataset d = generate(rc.dataset);
    const fs::path dir(o.out);
    fs::create_directories(dir);
    write_text(dir / "manifest.json", to_json(rc.dataset).dump(2) + "\n");
    save_samples(dir / "train.atsd", d.train);
    save_samples(dir / "val.atsd", d.val);
    for (std::size_t i = 0; i < std::min(o.pgm_preview, d.val.size()); ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "val_%04zu.pgm", i);
        save_pgm(dir / name, d.val[i].image);
    }
    out << "wrote " << d.train.size() << " train and " << d.val.size() << " val samples to " << dir.string() << '\n';
    return kExitOk;
}

int cmd_train(const Options& o, std::ostream& out, std::ostream& err) {
    const RunConfig rc = config_of(o);
    const AtsConfig ats = ats_of(o, rc, rc.arch, false);
    const Dataset data = data_of(o, rc, rc.arch);
    TrainConfig tc = train_config(o, rc, rc.epochs, err);
    tc.ats = ats;
    Model<float> model = Model<float>::initialize(rc.arch, tc.seed);
    const TrainLog log = train(model, data, tc);
    save_weights(model, o.out);
    std::ostringstream csv;
    write_metrics_csv(csv, log);
    write_text(metrics_path(o), csv.str());
    out << "final val top1 " << log.rows.back().top1 << '\n';
    return kExitOk;
}

int cmd_finetune(const Options& o, std::ostream& out, std::ostream& err) {
    const RunConfig rc = config_of(o);
    Model<float> model = load_weights<float>(o.weights);
    const AtsConfig ats = ats_of(o, rc, model.arch(), true);
    const Dataset data = data_of(o, rc, model.arch());
    TrainConfig tc = train_config(o, rc, rc.finetune_epochs, err);
    tc.ats = ats;
    const TrainLog log = fine_tune(model, data, tc);
    save_weights(model, o.out);
    std::ostringstream csv;
    write_metrics_csv(csv, log);
    write_text(metrics_path(o), csv.str());
    out << "final val top1 " << log.rows.back().top1 << '\n';
    return kExitOk;
}

const std::vector<ShapeSample>& split_of(const Options& o, const Dataset& d) {
    if (o.split == "val") return d.val;
    if (o.split == "train") return d.train;
    throw CLI::ValidationError("--split must be train or val");
}

int cmd_eval(const Options& o, std::ostream& out) {
    const RunConfig rc = config_of(o);
    const Model<float> model = load_weights<float>(o.weights);
    AtsConfig ats = ats_of(o, rc, model.arch(), false);
    const Dataset data = data_of(o, rc, model.arch());
    const auto& samples = split_of(o, data);
    const std::uint64_t seed_base = o.seed.value_or(0);
    std::optional<BudgetChoice> choice;
    if (!o.mac_fraction.empty()) {
        choice = resolve_mac_fraction(model, samples, ats, o.mac_fraction.front(), 0, seed_base);
        ats.budget = {choice->budget};
    }
    const EvalResult result = evaluate(model, samples, ats, 0, seed_base);
    json report = eval_report(result, model.arch(), ats);
    report["split"] = o.split;
    if (choice) report["mac_fraction_target"] = o.mac_fraction.front();
    const std::string text = report.dump(2) + "\n";
    if (o.out.empty()) out << text;
    else write_text(o.out, text);
    return kExitOk;
}

int cmd_sweep(const Options& o, std::ostream& out) {
    const RunConfig rc = config_of(o);
    const Model<float> model = load_weights<float>(o.weights);
    // --k lists the budgets to sweep rather than per-stage budgets.
    const AtsConfig base = ats_of(o, rc, model.arch(), true, false);
    if (!base.enabled()) throw ContractError("sweep: needs at least one ATS stage");
    const Dataset data = data_of(o, rc, model.arch());
    const auto& samples = split_of(o, data);
    const std::uint64_t seed_base = o.seed.value_or(0);
    const std::size_t n = model.arch().num_patches();
    const double baseline = static_cast<double>(baseline_macs(model.arch()).total_macs);

    std::vector<std::size_t> budgets;
    if (o.mac_fraction.empty()) {
        if (o.k) {
            budgets = parse_budget(*o.k, n);
        } else {
            for (std::size_t k = 1; k <= n; ++k) budgets.push_back(k);
        }
    }
    std::ostringstream csv;
    csv << "schema,policy,scoring,K,top1,mean_macs,mac_fraction\n";
    for (const auto& policy_name : split(o.policies, ',')) {
        for (const auto& scoring_name : split(o.scorings, ',')) {
            AtsConfig ats = base;
            ats.policy = parse_policy(policy_name);
            ats.scoring = parse_scoring(scoring_name);
            std::vector<std::size_t> ks = budgets;
            for (double f : o.mac_fraction) ks.push_back(resolve_mac_fraction(model, samples, ats, f, 0, seed_base).budget);
            for (std::size_t k : ks) {
                ats.budget = {k};
                const EvalResult r = evaluate(model, samples, ats, 0, seed_base);
                char line[256];
                std::snprintf(line, sizeof(line), "1,%s,%s,%zu,%.6f,%.1f,%.6f\n",
                              std::string(to_string(ats.policy)).c_str(), std::string(to_string(ats.scoring)).c_str(),
                              k, r.top1, r.mean_macs, r.mean_macs / baseline);
                csv << line;
            }
        }
    }
    if (o.out.empty()) out << csv.str();
    else write_text(o.out, csv.str());
    return kExitOk;
}

/// Patch-grid mask of `kept` (indices into the original token sequence),
/// upscaled to the image size. CLS has no patch and never appears.
std::vector<std::uint8_t> mask_pixels(const std::vector<std::size_t>& kept, const ArchConfig& arch) {
    const std::size_t s = arch.image_size, g = arch.grid();
    std::vector<bool> on(arch.tokens(), false);
    for (auto k : kept) on.at(k) = true;
    std::vector<std::uint8_t> px(s * s);
    for (std::size_t y = 0; y < s; ++y)
        for (std::size_t x = 0; x < s; ++x)
            px[y * s + x] = on[1 + (y / arch.patch_size) * g + x / arch.patch_size] ? 255 : 0;
    return px;
}

int cmd_masks(const Options& o, std::ostream& out) {
    const RunConfig rc = config_of(o);
    const Model<float> model = load_weights<float>(o.weights);
    const ArchConfig& arch = model.arch();
    const AtsConfig ats = ats_of(o, rc, arch, true);

    struct Input {
        std::string name;
        Tensor<float> image;
        std::optional<std::size_t> label;
    };
    std::vector<Input> inputs;
    if (!o.images.empty()) {
        for (const auto& path : o.images) inputs.push_back({fs::path(path).stem().string(), load_pgm(path, arch.image_size), {}});
    } else {
        const Dataset data = data_of(o, rc, arch);
        const auto& samples = split_of(o, data);
        for (std::size_t i = 0; i < std::min(o.count, samples.size()); ++i) {
            char name[32];
            std::snprintf(name, sizeof(name), "%s_%04zu", o.split.c_str(), i);
            inputs.push_back({name, samples[i].image, samples[i].label});
        }
    }
    const fs::path dir(o.out);
    fs::create_directories(dir);
    const std::uint64_t seed_base = o.seed.value_or(0);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        const ForwardTrace trace = forward(model, inputs[i].image, ats, mix64(seed_base + i));
        json stages = json::array();
        for (const auto& st : trace.stages) {
            const std::string file = inputs[i].name + "_b" + std::to_string(st.block) + ".pgm";
            write_pgm(dir / file, arch.image_size, arch.image_size, mask_pixels(st.kept_original, arch));
            json js = {{"block", st.block}, {"tokens_out", st.tokens_out}, {"kept_original", st.kept_original},
                       {"mask", file}};
            if (st.sample) js["sample"] = to_json(*st.sample);
            stages.push_back(std::move(js));
        }
        json doc = {{"schema", 1}, {"image", inputs[i].name}, {"predicted", trace.predicted}, {"stages", stages}};
        if (inputs[i].label) doc["label"] = *inputs[i].label;
        write_text(dir / (inputs[i].name + ".json"), doc.dump(2) + "\n");
    }
    out << "wrote masks for " << inputs.size() << " images to " << dir.string() << '\n';
    return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Adaptive token sampling for vision transformers", "ats"};
    app.require_subcommand(1);
    Options o;

    auto* dataset = app.add_subcommand("dataset", "Generate the synthetic clutter dataset");
    add_config_flags(dataset, o);
    dataset->add_option("--out", o.out, "Output directory")->required();
    dataset->add_option("--pgm", o.pgm_preview, "Also write the first N val images as PGM");

    auto* train_cmd = app.add_subcommand("train", "Train a model from scratch");
    auto* finetune = app.add_subcommand("finetune", "Fine-tune a trained model with ATS active");
    auto* eval = app.add_subcommand("eval", "Evaluate accuracy, MACs and K' histograms");
    auto* sweep = app.add_subcommand("sweep", "Accuracy and MACs over budgets, policies and scorings");
    auto* masks = app.add_subcommand("masks", "Write per-stage token retention masks");

    for (auto* cmd : {train_cmd, finetune, eval, sweep, masks}) {
        add_config_flags(cmd, o);
        add_ats_flags(cmd, o);
        cmd->add_option("--data", o.data, "Dataset directory written by 'ats dataset'")->check(CLI::ExistingDirectory);
    }
    for (auto* cmd : {train_cmd, finetune}) {
        cmd->add_option("--out", o.out, "Output weight file")->required();
        cmd->add_option("--metrics", o.metrics, "Metrics CSV (default: <out stem>.metrics.csv)");
        cmd->add_option("--epochs", o.epochs, "Epochs");
        cmd->add_option("--batch-size", o.batch_size, "Batch size");
        cmd->add_option("--lr", o.lr, "Peak learning rate");
    }
    for (auto* cmd : {finetune, eval, sweep, masks}) {
        cmd->add_option("--weights", o.weights, "Weight file")->required()->check(CLI::ExistingFile);
    }
    for (auto* cmd : {eval, sweep, masks}) {
        cmd->add_option("--split", o.split, "Dataset split: val or train")->check(CLI::IsMember({"val", "train"}));
    }
    eval->add_option("--out", o.out, "Report JSON (default: stdout)");
    eval->add_option("--mac-fraction", o.mac_fraction, "Pick the largest K whose mean MACs stay within this fraction")
        ->expected(1);
    sweep->add_option("--out", o.out, "CSV output (default: stdout)");
    sweep->add_option("--policies", o.policies, "Comma-separated policies");
    sweep->add_option("--scorings", o.scorings, "Comma-separated scoring methods");
    sweep->add_option("--mac-fraction", o.mac_fraction, "Target MAC fractions instead of absolute K")->delimiter(',');
    masks->add_option("--out", o.out, "Output directory")->required();
    masks->add_option("--images", o.images, "PGM inputs (default: the first --count dataset images)");
    masks->add_option("--count", o.count, "Number of dataset images");

    std::vector<const char*> argv{"ats"};
    for (const auto& a : args) argv.push_back(a.c_str());
    try {
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            app.exit(e, out, err);
            return kExitOk;
        }
        err << "error: " << e.what() << "\n" << "run 'ats --help' for usage\n";
        return kExitUsage;
    }

    try {
        if (dataset->parsed()) return cmd_dataset(o, out);
        if (train_cmd->parsed()) return cmd_train(o, out, err);
        if (finetune->parsed()) return cmd_finetune(o, out, err);
        if (eval->parsed()) return cmd_eval(o, out);
        if (sweep->parsed()) return cmd_sweep(o, out);
        if (masks->parsed()) return cmd_masks(o, out);
    } catch (const CLI::ValidationError& e) {
        err << "error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitUsage;
}

}  // namespace ats::cli
