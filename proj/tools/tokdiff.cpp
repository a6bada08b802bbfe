#include <atomic>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tokdiff/corpus.hpp"
#include "tokdiff/ctp.hpp"
#include "tokdiff/metrics.hpp"
#include "tokdiff/model.hpp"
#include "tokdiff/sampler.hpp"
#include "tokdiff/tokens.hpp"
#include "tokdiff/train.hpp"

namespace {

using namespace tokdiff;

std::string slurp(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open " + path + " for writing");
    out << text;
    if (!out) throw Error("write failed for " + path);
}

nlohmann::json load_config(const std::string& path) {
    if (path.empty()) return nlohmann::json::object();
    nlohmann::json j = nlohmann::json::parse(slurp(path), nullptr, false);
    if (j.is_discarded() || !j.is_object())
        throw Error("config " + path + ": malformed JSON object");
    return j;
}

void check_keys(const nlohmann::json& j,
                std::initializer_list<const char*> keys, const char* what) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        bool ok = it.key() == "command";
        for (const char* k : keys) ok = ok || it.key() == k;
        if (!ok)
            throw Error(std::string(what) + " config: unknown key \"" +
                        it.key() + "\"");
    }
}

// Precedence: explicit flag > config file > built-in default.
template <class T>
void ov(CLI::App* cmd, const std::string& flag, const nlohmann::json& j,
        const char* key, T& var) {
    if (cmd->count(flag) == 0 && j.contains(key)) {
        try {
            var = j[key].get<T>();
        } catch (const nlohmann::json::exception& e) {
            throw Error(std::string("config key \"") + key + "\": " + e.what());
        }
    }
}

std::string num_str(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", x);
    return buf;
}

void append_ints(std::string& out, const std::vector<int>& xs) {
    out += '[';
    for (size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ',';
        out += std::to_string(xs[i]);
    }
    out += ']';
}

std::vector<double> parse_points(const std::string& s) {
    std::vector<double> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        size_t used = 0;
        double v = std::stod(item, &used);
        if (used != item.size()) throw Error("bad sweep point \"" + item + "\"");
        out.push_back(v);
    }
    if (out.empty()) throw Error("empty sweep point list");
    return out;
}

std::vector<int> parse_ids(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        out.push_back(std::stoi(item));
    }
    return out;
}

// Ids seen on the source side but never on the target side: exactly the
// tokens the accent transform introduced.
std::vector<int> derive_markers(const std::vector<const PairedSample*>& samples,
                                int vocab) {
    std::vector<char> in_src(vocab, 0), in_tgt(vocab, 0);
    for (const PairedSample* s : samples) {
        for (int t : s->source)
            if (t >= 0 && t < vocab) in_src[t] = 1;
        for (int t : s->target)
            if (t >= 0 && t < vocab) in_tgt[t] = 1;
    }
    std::vector<int> out;
    for (int t = 0; t < vocab; ++t)
        if (in_src[t] && !in_tgt[t]) out.push_back(t);
    return out;
}

SamplerConfig::Reuse reuse_from_string(const std::string& s) {
    if (s == "threshold") return SamplerConfig::Reuse::Threshold;
    if (s == "proportion") return SamplerConfig::Reuse::Proportion;
    if (s == "random") return SamplerConfig::Reuse::Random;
    if (s == "none") return SamplerConfig::Reuse::None;
    throw Error("unknown reuse mode \"" + s + "\"");
}

uint64_t sample_seed(uint64_t root, uint64_t index) {
    Rng r = Rng(root).child("convert", index);
    return r.next_u64();
}

std::vector<ConvertResult> run_conversions(
    const Model& m, const std::vector<const PairedSample*>& samples,
    const SamplerConfig& base, RatioMode rmode, double explicit_ratio,
    uint64_t seed, int flow_steps, int threads) {
    std::vector<ConvertResult> results(samples.size());
    if (threads < 1) threads = 1;
    std::atomic<size_t> next{0};
    std::mutex err_mu;
    std::string first_err;
    auto worker = [&] {
        for (;;) {
            size_t i = next.fetch_add(1);
            if (i >= samples.size()) return;
            try {
                SamplerConfig c = base;
                c.seed = sample_seed(seed, i);
                results[i] = convert(m, samples[i]->source, c, rmode,
                                     explicit_ratio, flow_steps);
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lock(err_mu);
                if (first_err.empty())
                    first_err = "sample " + std::to_string(i) + ": " + e.what();
            }
        }
    };
    if (threads == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    if (!first_err.empty()) throw Error(first_err);
    return results;
}

struct AggMetrics {
    double reuse_fraction = 0.0;
    double marker_retention = 0.0;
    double edit_to_target = 0.0;
    double edit_to_source = 0.0;
    double mean_ratio = 0.0;
};

AggMetrics aggregate(const std::vector<const PairedSample*>& samples,
                     const std::vector<ConvertResult>& results,
                     const std::vector<int>& markers) {
    AggMetrics a;
    long long src_markers = 0, out_markers = 0;
    for (size_t i = 0; i < samples.size(); ++i) {
        const PairedSample* s = samples[i];
        const ConvertResult& r = results[i];
        a.reuse_fraction += r.output.empty()
                                ? 0.0
                                : static_cast<double>(r.trace.reuse_targets.size()) /
                                      static_cast<double>(r.output.size());
        src_markers += count_ids(s->source, markers);
        out_markers += count_ids(r.output, markers);
        a.edit_to_target += edit_distance(r.output, s->target);
        a.edit_to_source += edit_distance(r.output, s->source);
        a.mean_ratio += static_cast<double>(r.output.size()) /
                        static_cast<double>(s->source.size());
    }
    double n = static_cast<double>(samples.size());
    if (n > 0) {
        a.reuse_fraction /= n;
        a.edit_to_target /= n;
        a.edit_to_source /= n;
        a.mean_ratio /= n;
    }
    a.marker_retention = src_markers > 0 ? static_cast<double>(out_markers) /
                                               static_cast<double>(src_markers)
                                         : 0.0;
    return a;
}

std::vector<const PairedSample*> take_samples(
    const std::vector<PairedSample>& all, const std::string& split,
    int eval_percent, int limit) {
    std::vector<const PairedSample*> out;
    for (const PairedSample& s : all) {
        bool in_eval = eval_split(s.latent_labels, eval_percent);
        if (split == "eval" && !in_eval) continue;
        if (split == "train" && in_eval) continue;
        out.push_back(&s);
        if (limit > 0 && static_cast<int>(out.size()) >= limit) break;
    }
    return out;
}

// ---- gen-corpus ----

int cmd_gen_corpus(CLI::App* cmd, const std::string& config_path,
                   std::string out, std::string specs_path,
                   std::string specs_dump_path, int n, uint64_t seed,
                   CorpusParams params) {
    nlohmann::json j = load_config(config_path);
    check_keys(j,
               {"out", "specs", "n", "seed", "vocab", "alphabet", "latent_min",
                "latent_max"},
               "gen-corpus");
    ov(cmd, "--out", j, "out", out);
    ov(cmd, "--n", j, "n", n);
    ov(cmd, "--seed", j, "seed", seed);
    ov(cmd, "--vocab", j, "vocab", params.vocab);
    ov(cmd, "--alphabet", j, "alphabet", params.alphabet);
    ov(cmd, "--latent-min", j, "latent_min", params.latent_min);
    ov(cmd, "--latent-max", j, "latent_max", params.latent_max);
    if (out.empty()) throw Error("gen-corpus: --out is required");

    std::vector<AccentSpec> specs;
    if (!specs_path.empty())
        specs = read_specs(specs_path);
    else if (j.contains("specs"))
        specs = specs_from_json(j["specs"].dump());
    else
        specs = default_specs(params);

    if (!specs_dump_path.empty()) write_specs(specs, specs_dump_path);

    std::vector<PairedSample> samples = gen_corpus(params, specs, n, Rng(seed));
    write_corpus(samples, out);

    nlohmann::json resolved;
    resolved["command"] = "gen-corpus";
    resolved["out"] = out;
    resolved["n"] = n;
    resolved["seed"] = seed;
    resolved["vocab"] = params.vocab;
    resolved["alphabet"] = params.alphabet;
    resolved["latent_min"] = params.latent_min;
    resolved["latent_max"] = params.latent_max;
    resolved["specs"] = nlohmann::json::parse(specs_to_json(specs));
    spit(out + ".config.json", resolved.dump(2) + "\n");
    std::cout << "wrote " << samples.size() << " pairs to " << out << "\n";
    return 0;
}

// ---- label ----

int cmd_label(CLI::App* cmd, const std::string& config_path, std::string in,
              std::string out, int vocab) {
    nlohmann::json j = load_config(config_path);
    check_keys(j, {"in", "out", "vocab"}, "label");
    ov(cmd, "--in", j, "in", in);
    ov(cmd, "--out", j, "out", out);
    ov(cmd, "--vocab", j, "vocab", vocab);
    if (in.empty() || out.empty()) throw Error("label: --in and --out required");

    std::vector<PairedSample> samples = read_corpus(in, Vocab(vocab));
    long long conflicts = 0;
    for (PairedSample& s : samples) {
        s.common_labels = annotate(s.source, s.target);
        if (!s.provenance.empty())
            conflicts += provenance_conflicts(s.common_labels, s.provenance);
    }
    write_corpus(samples, out);

    nlohmann::json resolved;
    resolved["command"] = "label";
    resolved["in"] = in;
    resolved["out"] = out;
    resolved["vocab"] = vocab;
    spit(out + ".config.json", resolved.dump(2) + "\n");
    std::cout << "labeled " << samples.size() << " pairs ("
              << conflicts << " transformed positions matched anyway)\n";
    return 0;
}

// ---- train ----

int cmd_train(CLI::App* cmd, const std::string& config_path,
              std::string corpus, std::string out_dir, uint64_t seed,
              double lr, int batch_size, int pretrain, int finetune,
              int eval_percent) {
    nlohmann::json j = load_config(config_path);
    std::string cfg_corpus;
    if (j.contains("corpus")) {
        cfg_corpus = j["corpus"].get<std::string>();
        j.erase("corpus");
    }
    j.erase("command");
    TrainConfig cfg = train_config_from_json(j.empty() ? "{}" : j.dump());
    if (cmd->count("--corpus") == 0 && !cfg_corpus.empty()) corpus = cfg_corpus;
    if (cmd->count("--seed")) cfg.seed = seed;
    if (cmd->count("--lr")) cfg.lr = lr;
    if (cmd->count("--batch-size")) cfg.batch_size = batch_size;
    if (cmd->count("--pretrain-epochs")) cfg.pretrain_epochs = pretrain;
    if (cmd->count("--finetune-epochs")) cfg.finetune_epochs = finetune;
    if (cmd->count("--eval-percent")) cfg.eval_percent = eval_percent;
    cfg.validate();
    if (corpus.empty() || out_dir.empty())
        throw Error("train: --corpus and --out-dir required");

    std::vector<PairedSample> all =
        read_corpus(corpus, cfg.model.vocab_ids());
    std::vector<int> train_idx, eval_idx;
    split_corpus(all, cfg.eval_percent, &train_idx, &eval_idx);
    std::vector<PairedSample> train_set;
    train_set.reserve(train_idx.size());
    for (int i : train_idx) train_set.push_back(all[i]);
    if (train_set.empty()) throw Error("train: train split is empty");

    namespace fs = std::filesystem;
    fs::create_directories(fs::path(out_dir) / "checkpoints");
    std::string ckpt = (fs::path(out_dir) / "checkpoints" / "model.bin").string();
    std::string csv = (fs::path(out_dir) / "metrics.csv").string();

    nlohmann::json resolved = nlohmann::json::parse(train_config_to_json(cfg));
    resolved["command"] = "train";
    resolved["corpus"] = corpus;
    spit((fs::path(out_dir) / "config.json").string(), resolved.dump(2) + "\n");

    Model m(cfg.model, Rng(cfg.seed).child("init").next_u64());
    std::cout << "training on " << train_set.size() << " pairs ("
              << eval_idx.size() << " held out), "
              << m.params().scalar_count() << " parameters\n";
    TrainResult res = train_model(m, train_set, cfg, ckpt, csv, &std::cout);
    if (res.aborted) {
        std::cerr << "training aborted: " << res.abort_reason
                  << " (checkpoint holds the last good epoch)\n";
        return 2;
    }
    std::cout << "done; checkpoint at " << ckpt << "\n";
    return 0;
}

// ---- convert ----

int cmd_convert(CLI::App* cmd, const std::string& config_path,
                std::string ckpt, std::string in, std::string out,
                std::string trace_out, SamplerConfig scfg, std::string reuse,
                std::string ratio, uint64_t seed, int limit, int flow_steps,
                int threads) {
    nlohmann::json j = load_config(config_path);
    check_keys(j,
               {"ckpt", "in", "out", "trace_out", "tau", "proportion", "steps",
                "cfg", "reuse", "ratio", "seed", "limit", "flow_steps",
                "threads"},
               "convert");
    ov(cmd, "--ckpt", j, "ckpt", ckpt);
    ov(cmd, "--in", j, "in", in);
    ov(cmd, "--out", j, "out", out);
    ov(cmd, "--trace-out", j, "trace_out", trace_out);
    ov(cmd, "--tau", j, "tau", scfg.tau);
    ov(cmd, "--proportion", j, "proportion", scfg.proportion);
    ov(cmd, "--steps", j, "steps", scfg.steps);
    ov(cmd, "--cfg", j, "cfg", scfg.cfg_weight);
    ov(cmd, "--reuse", j, "reuse", reuse);
    ov(cmd, "--ratio", j, "ratio", ratio);
    ov(cmd, "--seed", j, "seed", seed);
    ov(cmd, "--limit", j, "limit", limit);
    ov(cmd, "--flow-steps", j, "flow_steps", flow_steps);
    ov(cmd, "--threads", j, "threads", threads);
    if (ckpt.empty() || in.empty() || out.empty())
        throw Error("convert: --ckpt, --in and --out required");
    scfg.reuse = reuse_from_string(reuse);

    RatioMode rmode = RatioMode::Auto;
    double explicit_ratio = 1.0;
    if (ratio != "auto") {
        rmode = RatioMode::Explicit;
        explicit_ratio = std::stod(ratio);
    }

    Model m = load_checkpoint(ckpt);
    std::vector<PairedSample> all = read_corpus(in, m.config().vocab_ids());
    std::vector<const PairedSample*> samples = take_samples(all, "all", 0, limit);
    std::vector<ConvertResult> results = run_conversions(
        m, samples, scfg, rmode, explicit_ratio, seed, flow_steps, threads);

    std::string buf;
    std::ofstream of(out, std::ios::binary);
    if (!of) throw Error("cannot open " + out + " for writing");
    for (size_t i = 0; i < samples.size(); ++i) {
        buf.clear();
        buf += "{\"src\":";
        append_ints(buf, samples[i]->source);
        buf += ",\"tgt\":";
        append_ints(buf, samples[i]->target);
        buf += ",\"out\":";
        append_ints(buf, results[i].output);
        buf += ",\"ratio\":" + num_str(results[i].ratio);
        buf += ",\"reused\":" +
               std::to_string(results[i].trace.reuse_targets.size());
        buf += "}\n";
        of << buf;
    }
    if (!of) throw Error("write failed for " + out);
    of.close();

    if (!trace_out.empty()) {
        std::ofstream tf(trace_out, std::ios::binary);
        if (!tf) throw Error("cannot open " + trace_out + " for writing");
        for (size_t i = 0; i < samples.size(); ++i) {
            const SamplerTrace& tr = results[i].trace;
            nlohmann::json row;
            row["index"] = i;
            row["reuse_targets"] = tr.reuse_targets;
            row["n_mask0"] = tr.n_mask0;
            row["k"] = tr.k;
            row["t_eff"] = tr.t_eff;
            row["s0"] = tr.s0;
            nlohmann::json steps = nlohmann::json::array();
            for (const StepRecord& sr : tr.steps) {
                nlohmann::json sj;
                sj["step"] = sr.step;
                sj["positions"] = sr.positions;
                nlohmann::json confs = nlohmann::json::array();
                for (double c : sr.confidences) confs.push_back(c);
                sj["confidences"] = confs;
                steps.push_back(sj);
            }
            row["steps"] = steps;
            tf << row.dump() << "\n";
        }
    }

    nlohmann::json resolved;
    resolved["command"] = "convert";
    resolved["ckpt"] = ckpt;
    resolved["in"] = in;
    resolved["out"] = out;
    resolved["trace_out"] = trace_out;
    resolved["tau"] = scfg.tau;
    resolved["proportion"] = scfg.proportion;
    resolved["steps"] = scfg.steps;
    resolved["cfg"] = scfg.cfg_weight;
    resolved["reuse"] = reuse;
    resolved["ratio"] = ratio;
    resolved["seed"] = seed;
    resolved["limit"] = limit;
    resolved["flow_steps"] = flow_steps;
    resolved["threads"] = threads;
    spit(out + ".config.json", resolved.dump(2) + "\n");
    std::cout << "converted " << samples.size() << " sources to " << out << "\n";
    return 0;
}

// ---- sweep ----

int cmd_sweep(CLI::App* cmd, const std::string& config_path, std::string ckpt,
              std::string in, std::string out, std::string axis,
              std::string points_str, std::string markers_str, int n_samples,
              int steps, double cfg_w, double tau, uint64_t seed,
              int flow_steps, int threads, std::string split,
              int eval_percent) {
    nlohmann::json j = load_config(config_path);
    check_keys(j,
               {"ckpt", "in", "out", "axis", "points", "markers", "samples",
                "steps", "cfg", "tau", "seed", "flow_steps", "threads",
                "split", "eval_percent"},
               "sweep");
    ov(cmd, "--ckpt", j, "ckpt", ckpt);
    ov(cmd, "--in", j, "in", in);
    ov(cmd, "--out", j, "out", out);
    ov(cmd, "--axis", j, "axis", axis);
    ov(cmd, "--points", j, "points", points_str);
    ov(cmd, "--markers", j, "markers", markers_str);
    ov(cmd, "--samples", j, "samples", n_samples);
    ov(cmd, "--steps", j, "steps", steps);
    ov(cmd, "--cfg", j, "cfg", cfg_w);
    ov(cmd, "--tau", j, "tau", tau);
    ov(cmd, "--seed", j, "seed", seed);
    ov(cmd, "--flow-steps", j, "flow_steps", flow_steps);
    ov(cmd, "--threads", j, "threads", threads);
    ov(cmd, "--split", j, "split", split);
    ov(cmd, "--eval-percent", j, "eval_percent", eval_percent);
    if (ckpt.empty() || in.empty() || out.empty())
        throw Error("sweep: --ckpt, --in and --out required");
    if (axis != "tau" && axis != "proportion" && axis != "ratio")
        throw Error("sweep: --axis must be tau, proportion or ratio");

    std::vector<double> points;
    if (!points_str.empty()) {
        points = parse_points(points_str);
    } else if (axis == "tau") {
        for (int i = 0; i <= 10; ++i) points.push_back(0.1 * i);
    } else if (axis == "proportion") {
        for (int i = 1; i <= 9; ++i) points.push_back(0.1 * i);
    } else {
        points = {0.5, 0.75, 1.0, 1.25, 1.5};
    }

    Model m = load_checkpoint(ckpt);
    std::vector<PairedSample> all = read_corpus(in, m.config().vocab_ids());
    std::vector<const PairedSample*> samples =
        take_samples(all, split, eval_percent, n_samples);
    if (samples.empty()) throw Error("sweep: no samples selected");
    std::vector<int> markers = markers_str.empty()
                                   ? derive_markers(samples, m.config().vocab)
                                   : parse_ids(markers_str);

    std::string csv =
        "axis,point,mode,samples,reuse_fraction,marker_retention,"
        "edit_to_target,edit_to_source,mean_ratio\n";
    auto add_row = [&](double point, const std::string& mode,
                       const AggMetrics& a) {
        csv += axis + "," + num_str(point) + "," + mode + "," +
               std::to_string(samples.size()) + "," +
               num_str(a.reuse_fraction) + "," + num_str(a.marker_retention) +
               "," + num_str(a.edit_to_target) + "," +
               num_str(a.edit_to_source) + "," + num_str(a.mean_ratio) + "\n";
    };

    for (double point : points) {
        SamplerConfig base;
        base.steps = steps;
        base.cfg_weight = cfg_w;
        base.tau = tau;
        if (axis == "tau") {
            base.reuse = SamplerConfig::Reuse::Threshold;
            base.tau = point;
            AggMetrics a = aggregate(
                samples, run_conversions(m, samples, base, RatioMode::Auto, 1.0,
                                         seed, flow_steps, threads),
                markers);
            add_row(point, "ctp", a);
        } else if (axis == "proportion") {
            base.proportion = point;
            base.reuse = SamplerConfig::Reuse::Proportion;
            AggMetrics a = aggregate(
                samples, run_conversions(m, samples, base, RatioMode::Auto, 1.0,
                                         seed, flow_steps, threads),
                markers);
            add_row(point, "ctp", a);
            base.reuse = SamplerConfig::Reuse::Random;
            AggMetrics b = aggregate(
                samples, run_conversions(m, samples, base, RatioMode::Auto, 1.0,
                                         seed, flow_steps, threads),
                markers);
            add_row(point, "random", b);
        } else {
            base.reuse = SamplerConfig::Reuse::Threshold;
            AggMetrics a = aggregate(
                samples, run_conversions(m, samples, base, RatioMode::Explicit,
                                         point, seed, flow_steps, threads),
                markers);
            add_row(point, "explicit", a);
        }
    }
    spit(out, csv);

    nlohmann::json resolved;
    resolved["command"] = "sweep";
    resolved["ckpt"] = ckpt;
    resolved["in"] = in;
    resolved["out"] = out;
    resolved["axis"] = axis;
    resolved["points"] = points;
    resolved["markers"] = markers;
    resolved["samples"] = n_samples;
    resolved["steps"] = steps;
    resolved["cfg"] = cfg_w;
    resolved["tau"] = tau;
    resolved["seed"] = seed;
    resolved["flow_steps"] = flow_steps;
    resolved["threads"] = threads;
    resolved["split"] = split;
    resolved["eval_percent"] = eval_percent;
    spit(out + ".config.json", resolved.dump(2) + "\n");
    std::cout << "swept " << axis << " over " << points.size() << " points ("
              << samples.size() << " samples each) to " << out << "\n";
    return 0;
}

// ---- eval ----

int cmd_eval(CLI::App* cmd, const std::string& config_path, std::string ckpt,
             std::string in, std::string out, std::string markers_str,
             int n_samples, int steps, double cfg_w, double tau, uint64_t seed,
             int flow_steps, int threads, std::string split,
             int eval_percent) {
    nlohmann::json j = load_config(config_path);
    check_keys(j,
               {"ckpt", "in", "out", "markers", "samples", "steps", "cfg",
                "tau", "seed", "flow_steps", "threads", "split",
                "eval_percent"},
               "eval");
    ov(cmd, "--ckpt", j, "ckpt", ckpt);
    ov(cmd, "--in", j, "in", in);
    ov(cmd, "--out", j, "out", out);
    ov(cmd, "--markers", j, "markers", markers_str);
    ov(cmd, "--samples", j, "samples", n_samples);
    ov(cmd, "--steps", j, "steps", steps);
    ov(cmd, "--cfg", j, "cfg", cfg_w);
    ov(cmd, "--tau", j, "tau", tau);
    ov(cmd, "--seed", j, "seed", seed);
    ov(cmd, "--flow-steps", j, "flow_steps", flow_steps);
    ov(cmd, "--threads", j, "threads", threads);
    ov(cmd, "--split", j, "split", split);
    ov(cmd, "--eval-percent", j, "eval_percent", eval_percent);
    if (ckpt.empty() || in.empty() || out.empty())
        throw Error("eval: --ckpt, --in and --out required");

    Model m = load_checkpoint(ckpt);
    std::vector<PairedSample> all = read_corpus(in, m.config().vocab_ids());
    std::vector<const PairedSample*> samples =
        take_samples(all, split, eval_percent, n_samples);
    if (samples.empty()) throw Error("eval: no samples selected");
    std::vector<int> markers = markers_str.empty()
                                   ? derive_markers(samples, m.config().vocab)
                                   : parse_ids(markers_str);

    SamplerConfig base;
    base.steps = steps;
    base.cfg_weight = cfg_w;
    base.tau = tau;
    base.reuse = SamplerConfig::Reuse::Threshold;
    std::vector<ConvertResult> results = run_conversions(
        m, samples, base, RatioMode::Auto, 1.0, seed, flow_steps, threads);
    AggMetrics a = aggregate(samples, results, markers);

    std::vector<double> scores_pool;
    std::vector<int> labels_pool;
    double dp_se = 0.0, ratio_true_sum = 0.0, ratio_pred_sum = 0.0;
    for (size_t i = 0; i < samples.size(); ++i) {
        const PairedSample* s = samples[i];
        if (s->common_labels.size() == s->source.size()) {
            const CtpScores& sc = results[i].scores;
            for (size_t p = 0; p < sc.size(); ++p) {
                scores_pool.push_back(sc[p]);
                labels_pool.push_back(s->common_labels[p]);
            }
        }
        Rng rr = Rng(seed).child("ratio", static_cast<uint64_t>(i));
        Tensor content = m.encode(s->source);
        double pred = m.predict_ratio(content, s->source, flow_steps, rr);
        double truth = s->ratio();
        dp_se += (pred - truth) * (pred - truth);
        ratio_true_sum += truth;
        ratio_pred_sum += pred;
    }
    double n = static_cast<double>(samples.size());

    nlohmann::json report;
    report["samples"] = samples.size();
    report["marker_retention"] = a.marker_retention;
    report["marker_removal"] = 1.0 - a.marker_retention;
    report["edit_to_target"] = a.edit_to_target;
    report["edit_to_source"] = a.edit_to_source;
    report["reuse_fraction"] = a.reuse_fraction;
    report["mean_ratio_out"] = a.mean_ratio;
    report["ctp_auc"] =
        labels_pool.empty() ? 0.0 : auc_score(scores_pool, labels_pool);
    report["dp_mse"] = dp_se / n;
    report["mean_ratio_true"] = ratio_true_sum / n;
    report["mean_ratio_pred"] = ratio_pred_sum / n;
    spit(out, report.dump(2) + "\n");

    nlohmann::json resolved;
    resolved["command"] = "eval";
    resolved["ckpt"] = ckpt;
    resolved["in"] = in;
    resolved["out"] = out;
    resolved["markers"] = markers;
    resolved["samples"] = n_samples;
    resolved["steps"] = steps;
    resolved["cfg"] = cfg_w;
    resolved["tau"] = tau;
    resolved["seed"] = seed;
    resolved["flow_steps"] = flow_steps;
    resolved["threads"] = threads;
    resolved["split"] = split;
    resolved["eval_percent"] = eval_percent;
    spit(out + ".config.json", resolved.dump(2) + "\n");
    std::cout << report.dump(2) << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"token sequence conversion via masked diffusion"};
    app.require_subcommand(1);

    // gen-corpus
    auto* gen = app.add_subcommand("gen-corpus", "generate a paired corpus");
    std::string g_config, g_out, g_specs, g_write_specs;
    int g_n = 5000;
    uint64_t g_seed = 1;
    CorpusParams g_params;
    gen->add_option("--config", g_config, "JSON config");
    gen->add_option("--out", g_out, "output corpus (JSONL)");
    gen->add_option("--specs", g_specs, "accent spec file (JSON)");
    gen->add_option("--write-specs", g_write_specs, "dump the specs in use");
    gen->add_option("--n", g_n, "sample count");
    gen->add_option("--seed", g_seed, "root seed");
    gen->add_option("--vocab", g_params.vocab, "content vocabulary size");
    gen->add_option("--alphabet", g_params.alphabet, "latent alphabet size");
    gen->add_option("--latent-min", g_params.latent_min, "min latent length");
    gen->add_option("--latent-max", g_params.latent_max, "max latent length");

    // label
    auto* lab = app.add_subcommand("label", "recompute common-token labels");
    std::string l_config, l_in, l_out;
    int l_vocab = 64;
    lab->add_option("--config", l_config, "JSON config");
    lab->add_option("--in", l_in, "input corpus (JSONL)");
    lab->add_option("--out", l_out, "output corpus (JSONL)");
    lab->add_option("--vocab", l_vocab, "content vocabulary size");

    // train
    auto* trn = app.add_subcommand("train", "two-stage training run");
    std::string t_config, t_corpus, t_out_dir;
    uint64_t t_seed = 1;
    double t_lr = 3e-4;
    int t_batch = 8, t_pre = 4, t_fin = 12, t_evalpct = 10;
    trn->add_option("--config", t_config, "train config JSON");
    trn->add_option("--corpus", t_corpus, "training corpus (JSONL)");
    trn->add_option("--out-dir", t_out_dir, "run directory");
    trn->add_option("--seed", t_seed, "root seed");
    trn->add_option("--lr", t_lr, "learning rate");
    trn->add_option("--batch-size", t_batch, "batch size");
    trn->add_option("--pretrain-epochs", t_pre, "stage-1 epochs");
    trn->add_option("--finetune-epochs", t_fin, "stage-2 epochs");
    trn->add_option("--eval-percent", t_evalpct, "held-out percentage");

    // convert
    auto* cnv = app.add_subcommand("convert", "convert sources with a checkpoint");
    std::string c_config, c_ckpt, c_in, c_out, c_trace;
    std::string c_reuse = "threshold", c_ratio = "auto";
    SamplerConfig c_scfg;
    uint64_t c_seed = 0;
    int c_limit = 0, c_flow = 16, c_threads = 1;
    cnv->add_option("--config", c_config, "JSON config");
    cnv->add_option("--ckpt", c_ckpt, "checkpoint file");
    cnv->add_option("--in", c_in, "input corpus (JSONL)");
    cnv->add_option("--out", c_out, "output JSONL");
    cnv->add_option("--trace-out", c_trace, "per-sample sampler trace JSONL");
    cnv->add_option("--tau", c_scfg.tau, "reuse threshold");
    cnv->add_option("--proportion", c_scfg.proportion, "reuse proportion");
    cnv->add_option("--steps", c_scfg.steps, "sampling steps T");
    cnv->add_option("--cfg", c_scfg.cfg_weight, "guidance weight");
    cnv->add_option("--reuse", c_reuse, "threshold|proportion|random|none");
    cnv->add_option("--ratio", c_ratio, "length ratio, number or 'auto'");
    cnv->add_option("--seed", c_seed, "root seed");
    cnv->add_option("--limit", c_limit, "convert at most N samples (0 = all)");
    cnv->add_option("--flow-steps", c_flow, "duration ODE steps");
    cnv->add_option("--threads", c_threads, "worker threads");

    // sweep
    auto* swp = app.add_subcommand("sweep", "metric sweep along one axis");
    std::string s_config, s_ckpt, s_in, s_out, s_axis, s_points, s_markers;
    std::string s_split = "all";
    int s_samples = 200, s_steps = 8, s_flow = 16, s_threads = 1,
        s_evalpct = 10;
    double s_cfg_w = 1.0, s_tau = 1.0;
    uint64_t s_seed = 0;
    swp->add_option("--config", s_config, "JSON config");
    swp->add_option("--ckpt", s_ckpt, "checkpoint file");
    swp->add_option("--in", s_in, "corpus (JSONL)");
    swp->add_option("--out", s_out, "output CSV");
    swp->add_option("--axis", s_axis, "tau|proportion|ratio");
    swp->add_option("--points", s_points, "comma-separated sweep points");
    swp->add_option("--markers", s_markers, "comma-separated marker ids");
    swp->add_option("--samples", s_samples, "samples per point");
    swp->add_option("--steps", s_steps, "sampling steps T");
    swp->add_option("--cfg", s_cfg_w, "guidance weight");
    swp->add_option("--tau", s_tau, "threshold for the ratio axis");
    swp->add_option("--seed", s_seed, "root seed");
    swp->add_option("--flow-steps", s_flow, "duration ODE steps");
    swp->add_option("--threads", s_threads, "worker threads");
    swp->add_option("--split", s_split, "all|train|eval");
    swp->add_option("--eval-percent", s_evalpct, "held-out percentage");

    // eval
    auto* evl = app.add_subcommand("eval", "metrics report on a corpus");
    std::string e_config, e_ckpt, e_in, e_out, e_markers;
    std::string e_split = "eval";
    int e_samples = 0, e_steps = 32, e_flow = 16, e_threads = 1,
        e_evalpct = 10;
    double e_cfg_w = 1.0, e_tau = 1.0;
    uint64_t e_seed = 0;
    evl->add_option("--config", e_config, "JSON config");
    evl->add_option("--ckpt", e_ckpt, "checkpoint file");
    evl->add_option("--in", e_in, "corpus (JSONL)");
    evl->add_option("--out", e_out, "report JSON");
    evl->add_option("--markers", e_markers, "comma-separated marker ids");
    evl->add_option("--samples", e_samples, "sample limit (0 = all)");
    evl->add_option("--steps", e_steps, "sampling steps T");
    evl->add_option("--cfg", e_cfg_w, "guidance weight");
    evl->add_option("--tau", e_tau, "reuse threshold");
    evl->add_option("--seed", e_seed, "root seed");
    evl->add_option("--flow-steps", e_flow, "duration ODE steps");
    evl->add_option("--threads", e_threads, "worker threads");
    evl->add_option("--split", e_split, "all|train|eval");
    evl->add_option("--eval-percent", e_evalpct, "held-out percentage");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed())
            return cmd_gen_corpus(gen, g_config, g_out, g_specs, g_write_specs,
                                  g_n, g_seed, g_params);
        if (lab->parsed()) return cmd_label(lab, l_config, l_in, l_out, l_vocab);
        if (trn->parsed())
            return cmd_train(trn, t_config, t_corpus, t_out_dir, t_seed, t_lr,
                             t_batch, t_pre, t_fin, t_evalpct);
        if (cnv->parsed())
            return cmd_convert(cnv, c_config, c_ckpt, c_in, c_out, c_trace,
                               c_scfg, c_reuse, c_ratio, c_seed, c_limit,
                               c_flow, c_threads);
        if (swp->parsed())
            return cmd_sweep(swp, s_config, s_ckpt, s_in, s_out, s_axis,
                             s_points, s_markers, s_samples, s_steps, s_cfg_w,
                             s_tau, s_seed, s_flow, s_threads, s_split,
                             s_evalpct);
        if (evl->parsed())
            return cmd_eval(evl, e_config, e_ckpt, e_in, e_out, e_markers,
                            e_samples, e_steps, e_cfg_w, e_tau, e_seed, e_flow,
                            e_threads, e_split, e_evalpct);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
