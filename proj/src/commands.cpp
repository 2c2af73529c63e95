#include "cntn/commands.hpp"

#include "json.hpp"

#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <ostream>
#include <thread>

namespace cntn {

namespace {

std::string num_g(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%g", v);
    return buf;
}

std::string fixed(double v, int digits) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", digits, v);
    return buf;
}

std::ofstream open_out(const fs::path& p, std::ios::openmode mode = std::ios::trunc) {
    std::ofstream os(p, mode);
    if (!os) throw std::runtime_error("cannot open for writing: " + p.string());
    return os;
}

void print_summary(std::ostream& out, const char* label, const Dataset& d) {
    std::array<std::size_t, 4> flags{};
    std::array<std::size_t, 3> conds{};
    for (const SequenceSample& s : d.samples) {
        ++flags[static_cast<std::size_t>(s.noise_flag)];
        ++conds[static_cast<std::size_t>(s.condition)];
    }
    out << label << ": " << d.size() << " sequences, " << d.n_ids << " ids, " << d.n_views << " views"
        << " (NM " << conds[0] << ", BG " << conds[1] << ", CL " << conds[2] << ")";
    out << "; noise flags: label " << flags[1] << ", augmentation " << flags[2] << ", split " << flags[3] << '\n';
}

bool refuse_existing(const fs::path& dir, std::initializer_list<const char*> names, bool force, std::ostream& out) {
    if (force) return false;
    for (const char* n : names) {
        if (fs::exists(dir / n)) {
            out << "refusing to overwrite " << (dir / n).string() << " (pass --force)\n";
            return true;
        }
    }
    return false;
}

void write_eval_files(const fs::path& dir, const EvalReport& report, const VarianceStats& var, std::uint64_t hash) {
    fs::create_directories(dir);
    auto csv = open_out(dir / "rank1.csv");
    write_eval_csv(csv, report, hash);
    auto js = open_out(dir / "rank1.json");
    write_eval_json(js, report, hash);
    auto vc = open_out(dir / "variance.csv");
    write_variance_csv(vc, var, hash);
}

VarianceStats test_variance(const ModelParams& f, const Dataset& test) {
    std::vector<int> ids;
    std::vector<Condition> conds;
    for (const SequenceSample& s : test.samples) {
        ids.push_back(s.identity);
        conds.push_back(s.condition);
    }
    return variance_stats(embed(f, test), ids, conds);
}

void print_report(std::ostream& out, const EvalReport& r) {
    out << std::setw(6) << "cond";
    for (int v = 0; v < r.n_views; ++v) out << std::setw(9) << ("view" + std::to_string(v));
    out << std::setw(9) << "Mean" << '\n';
    for (std::size_t c = 0; c < r.conditions.size(); ++c) {
        out << std::setw(6) << to_string(r.conditions[c]);
        for (const auto& cell : r.cells[c]) out << std::setw(9) << (cell ? fixed(*cell, 1) : "-");
        out << std::setw(9) << fixed(r.condition_mean[c], 1) << '\n';
    }
}

nlohmann::json metrics_json(const MetricsRow& row, std::uint64_t hash) {
    return {{"iter", row.iter},
            {"l_c", row.losses.l_c},
            {"l_ce", row.losses.l_ce},
            {"l_tri", row.losses.l_tri},
            {"l_mil", row.losses.l_mil},
            {"l_crc", row.losses.l_crc},
            {"sigma0", row.losses.sigma[0]},
            {"sigma1", row.losses.sigma[1]},
            {"sigma2", row.losses.sigma[2]},
            {"sigma3", row.losses.sigma[3]},
            {"kept_fraction", row.mask.kept_fraction()},
            {"mean_entropy", row.mask.mean_entropy},
            {"mean_ce", row.mask.mean_ce},
            {"noisy", row.mask.noisy},
            {"masked_noisy", row.mask.masked_noisy},
            {"lr", row.lr},
            {"config_hash", hex64(hash)}};
}

}  // namespace

int cmd_gen_data(const GenDataArgs& args, std::ostream& out) {
    if (refuse_existing(args.out, {kTrainFile, kTestFile, kManifestFile}, args.force, out)) return 2;
    DatasetManifest manifest;
    manifest.gen = args.gen;
    if (args.corruption.mode != CorruptionMode::None) manifest.corruptions.push_back(args.corruption);
    const GeneratedData data = generate(manifest);
    const std::uint64_t hash = manifest_hash(manifest);

    fs::create_directories(args.out);
    write_dataset(args.out / kTrainFile, data.train, hash);
    write_dataset(args.out / kTestFile, data.test, hash);
    write_manifest(args.out / kManifestFile, manifest, hash);
    print_summary(out, "train", data.train);
    print_summary(out, "test", data.test);
    out << "manifest hash " << hex64(hash) << '\n';
    return 0;
}

int cmd_corrupt(const CorruptArgs& args, std::ostream& out) {
    if (args.corruption.mode == CorruptionMode::None) throw std::invalid_argument("corrupt: a corruption mode is required");
    const fs::path dst = args.out.empty() ? args.in : args.out;
    if (refuse_existing(dst, {kTrainFile, kTestFile, kManifestFile}, args.force, out)) return 2;
    DatasetManifest manifest = read_manifest(args.in / kManifestFile);
    Dataset train = read_dataset(args.in / kTrainFile);
    const Dataset test = read_dataset(args.in / kTestFile);

    train = apply_corruption(std::move(train), args.corruption);
    manifest.corruptions.push_back(args.corruption);
    const std::uint64_t hash = manifest_hash(manifest);

    fs::create_directories(dst);
    write_dataset(dst / kTrainFile, train, hash);
    write_dataset(dst / kTestFile, test, hash);
    write_manifest(dst / kManifestFile, manifest, hash);
    print_summary(out, "train", train);
    out << "manifest hash " << hex64(hash) << '\n';
    return 0;
}

LoadedData load_or_generate(const ExperimentConfig& cfg) {
    LoadedData d;
    if (cfg.data_dir.empty()) {
        d.manifest = cfg.manifest();
        GeneratedData g = generate(d.manifest);
        d.train = std::move(g.train);
        d.test = std::move(g.test);
        return d;
    }
    const fs::path dir(cfg.data_dir);
    d.train = read_dataset(dir / kTrainFile);
    if (fs::exists(dir / kTestFile)) d.test = read_dataset(dir / kTestFile);
    if (fs::exists(dir / kManifestFile)) d.manifest = read_manifest(dir / kManifestFile);
    return d;
}

int cmd_train(const ExperimentConfig& cfg, std::ostream& out) {
    const LoadedData data = load_or_generate(cfg);
    const fs::path dir = resolve_output_dir(cfg.output_dir);
    fs::create_directories(dir);
    for (const char* stale : {"model_m.ckpt", "model_m_init.ckpt", "trace.bin", "diagnostic.json"}) fs::remove(dir / stale);
    const std::uint64_t hash = config_hash(cfg);
    {
        auto os = open_out(dir / "config.snapshot");
        os << "# config_hash = " << hex64(hash) << '\n' << serialize(cfg);
    }

    auto metrics = open_out(dir / "metrics.jsonl");
    std::optional<TraceWriter> trace;
    const NetShape shape = model_shape(cfg.trainer, data.train);
    if (cfg.trainer.record_trace) trace.emplace(dir / "trace.bin", shape, cfg.trainer.momentum, cfg.trainer.iterations, hash);

    RunOptions opts;
    opts.keep_trace = false;
    opts.snapshot_every = cfg.eval_every;
    opts.on_metrics = [&](const MetricsRow& row) { metrics << metrics_json(row, hash).dump() << '\n'; };
    if (trace) opts.on_trace = [&](const TraceRecord& r) { trace->append(r); };

    TrainResult res;
    try {
        res = run_training(data.train, cfg.trainer, opts);
    } catch (const NonFiniteLoss& e) {
        auto diag = open_out(dir / "diagnostic.json");
        diag << e.diagnostic() << '\n';
        out << "aborted: " << e.what() << "; diagnostic written to " << (dir / "diagnostic.json").string() << '\n';
        return 3;
    }
    if (trace) trace->close();
    metrics.close();

    save_checkpoint(dir / "model_f.ckpt", res.f, hash);
    save_checkpoint(dir / "model_f_init.ckpt", res.f_init, hash);
    if (res.m) {
        save_checkpoint(dir / "model_m.ckpt", *res.m, hash);
        save_checkpoint(dir / "model_m_init.ckpt", *res.m_init, hash);
    }
    out << "trained " << to_string(cfg.trainer.mode) << " for " << cfg.trainer.iterations << " iterations ("
        << res.forward_count << " forwards); outputs in " << dir.string() << '\n';

    if (!data.test.samples.empty()) {
        const EvalReport report = evaluate(res.f, data.test, cfg.eval);
        write_eval_files(dir / "eval", report, test_variance(res.f, data.test), hash);
        print_report(out, report);
    }
    if (!res.snapshots.empty()) {
        fs::create_directories(dir / "eval");
        auto os = open_out(dir / "eval" / "memcurve.csv");
        write_memcurve_csv(os, memorization_curve(res.snapshots, data.train), hash);
    }
    return 0;
}

int cmd_eval(const EvalArgs& args, std::ostream& out) {
    const Checkpoint ck = load_checkpoint(args.checkpoint);
    const fs::path file = fs::is_directory(args.dataset) ? args.dataset / kTestFile : args.dataset;
    const Dataset test = read_dataset(file);
    const EvalReport report = evaluate(ck.params, test, args.protocol);
    write_eval_files(args.out_dir, report, test_variance(ck.params, test), ck.config_hash);
    print_report(out, report);
    out << "overall mean " << fixed(report.overall_mean, 2) << " over " << report.probe_size << " probes\n";
    return 0;
}

const std::array<AblationVariant, 8>& ablation_grid() {
    static const std::array<AblationVariant, 8> grid{{
        {"supervised", TrainMode::Supervised, false, false},
        {"supervised+cyclic", TrainMode::Supervised, true, false},
        {"supervised+cyclic+AND", TrainMode::Supervised, true, true},
        {"selfsup", TrainMode::SelfSup, false, false},
        {"selfsup+cyclic", TrainMode::SelfSup, true, false},
        {"full-cyclic", TrainMode::Cntn, false, false},
        {"full-AND", TrainMode::Cntn, true, false},
        {"full", TrainMode::Cntn, true, true},
    }};
    return grid;
}

ExperimentConfig ablation_cell_config(const ExperimentConfig& base, const AblationVariant& v, int seed_offset) {
    ExperimentConfig c = base;
    const auto s = static_cast<std::uint64_t>(seed_offset);
    c.gen.seed += s;
    c.corruption.seed += s;
    c.trainer.seed += s;
    c.trainer.mode = v.mode;
    c.trainer.cyclic = v.cyclic;
    c.trainer.and_enabled = v.and_enabled;
    c.trainer.record_trace = false;
    return c;
}

EvalReport run_ablation_cell(const ExperimentConfig& cell_cfg, const LoadedData& data) {
    const TrainResult res = run_training(data.train, cell_cfg.trainer);
    return evaluate(res.f, data.test, cell_cfg.eval);
}

double AblationTable::mean(std::size_t row, Condition c) const {
    double s = 0.0;
    for (const auto& v : cells[row]) s += v[static_cast<std::size_t>(c)];
    return s / static_cast<double>(cells[row].size());
}

double AblationTable::stddev(std::size_t row, Condition c) const {
    if (cells[row].size() < 2) return 0.0;
    const double m = mean(row, c);
    double s = 0.0;
    for (const auto& v : cells[row]) s += (v[static_cast<std::size_t>(c)] - m) * (v[static_cast<std::size_t>(c)] - m);
    return std::sqrt(s / static_cast<double>(cells[row].size() - 1));
}

AblationTable run_ablation(const ExperimentConfig& base, int seeds, int threads) {
    if (seeds < 1) throw std::invalid_argument("ablate: need at least one seed");
    if (!base.data_dir.empty()) throw std::invalid_argument("ablate: seeds vary the generated data, so data_dir must be empty");
    AblationTable t;
    t.seeds = seeds;
    for (auto& row : t.cells) row.assign(static_cast<std::size_t>(seeds), {});

    std::vector<LoadedData> data;
    for (int s = 0; s < seeds; ++s) data.push_back(load_or_generate(ablation_cell_config(base, ablation_grid()[0], s)));

    const std::size_t jobs = ablation_grid().size() * static_cast<std::size_t>(seeds);
    std::atomic<std::size_t> next{0};
    std::mutex err_mu;
    std::exception_ptr err;
    auto worker = [&] {
        for (std::size_t j = next++; j < jobs; j = next++) {
            const std::size_t row = j / static_cast<std::size_t>(seeds);
            const int s = static_cast<int>(j % static_cast<std::size_t>(seeds));
            try {
                const ExperimentConfig cc = ablation_cell_config(base, ablation_grid()[row], s);
                const EvalReport r = run_ablation_cell(cc, data[static_cast<std::size_t>(s)]);
                auto& cell = t.cells[row][static_cast<std::size_t>(s)];
                for (Condition c : {Condition::NM, Condition::BG, Condition::CL})
                    cell[static_cast<std::size_t>(c)] = r.mean_for(c).value_or(std::numeric_limits<double>::quiet_NaN());
            } catch (...) {
                std::lock_guard lock(err_mu);
                if (!err) err = std::current_exception();
            }
        }
    };
    const int n = std::max(1, std::min<int>(threads, static_cast<int>(jobs)));
    if (n == 1) {
        worker();
    } else {
        std::vector<std::thread> pool;
        for (int i = 0; i < n; ++i) pool.emplace_back(worker);
        for (auto& th : pool) th.join();
    }
    if (err) std::rethrow_exception(err);
    return t;
}

void write_ablation_csv(std::ostream& os, const AblationTable& t, std::uint64_t config_hash) {
    os << "row,variant,NM_mean,NM_std,BG_mean,BG_std,CL_mean,CL_std,seeds\n";
    for (std::size_t r = 0; r < t.cells.size(); ++r) {
        os << '#' << r + 1 << ',' << ablation_grid()[r].name;
        for (Condition c : {Condition::NM, Condition::BG, Condition::CL})
            os << ',' << fixed(t.mean(r, c), 4) << ',' << fixed(t.stddev(r, c), 4);
        os << ',' << t.seeds << '\n';
    }
    os << "# config_hash," << hex64(config_hash) << '\n';
}

int cmd_ablate(const AblateArgs& args, std::ostream& out) {
    const AblationTable t = run_ablation(args.base, args.seeds, thread_count());
    const fs::path dir = resolve_output_dir(args.base.output_dir);
    fs::create_directories(dir);
    const std::uint64_t hash = config_hash(args.base);
    {
        auto os = open_out(dir / "config.snapshot");
        os << "# config_hash = " << hex64(hash) << '\n' << serialize(args.base);
    }
    auto csv = open_out(dir / "ablation.csv");
    write_ablation_csv(csv, t, hash);

    out << std::left << std::setw(4) << "#" << std::setw(24) << "variant" << std::right;
    for (const char* c : {"NM", "BG", "CL"}) out << std::setw(16) << c;
    out << '\n';
    for (std::size_t r = 0; r < t.cells.size(); ++r) {
        out << std::left << std::setw(4) << ("#" + std::to_string(r + 1)) << std::setw(24) << ablation_grid()[r].name
            << std::right;
        for (Condition c : {Condition::NM, Condition::BG, Condition::CL})
            out << std::setw(16) << (fixed(t.mean(r, c), 1) + " +- " + fixed(t.stddev(r, c), 1));
        out << '\n';
    }
    return 0;
}

int cmd_verify_eq5(const fs::path& run_dir, std::ostream& out) {
    Trace trace;
    try {
        trace = read_trace(run_dir / "trace.bin");
    } catch (const TraceCorruption& e) {
        out << "FAIL: trace record for iteration " << e.iteration() << " is corrupted\n";
        return 1;
    }
    const ModelParams f0 = load_checkpoint(run_dir / "model_f_init.ckpt").params;
    const ModelParams m0 = load_checkpoint(run_dir / "model_m_init.ckpt").params;
    const Eq5Result r = eq5_verify(trace, f0, m0, trace.momentum);

    double worst = r.max_rel_deviation;
    out << "iterations " << trace.steps.size() << ", parameters " << trace.layout.param_count() << ", m = "
        << num_g(trace.momentum) << '\n';
    out << "closed form vs replay: max relative deviation " << std::scientific << std::setprecision(3)
        << r.max_rel_deviation << '\n';
    if (fs::exists(run_dir / "model_m.ckpt")) {
        const double d = max_rel_deviation(r.replay_m.values(), load_checkpoint(run_dir / "model_m.ckpt").params.values());
        out << "replay vs stored M: max relative deviation " << d << '\n';
        worst = std::max(worst, d);
    }
    if (fs::exists(run_dir / "model_f.ckpt")) {
        const double d = max_rel_deviation(r.replay_f.values(), load_checkpoint(run_dir / "model_f.ckpt").params.values());
        out << "replay vs stored F: max relative deviation " << d << '\n';
        worst = std::max(worst, d);
    }
    out << std::defaultfloat;
    const bool pass = worst <= kEq5Tolerance;
    out << (pass ? "PASS" : "FAIL") << '\n';
    return pass ? 0 : 1;
}

int cmd_cost(long batch, double noise_rate, std::ostream& out) {
    const CostModel c = cost_model(batch, noise_rate);
    out << "coteach forwards:            " << num_g(c.coteach) << '\n';
    out << "cntn forwards (augmented):   " << num_g(c.cntn_aug) << '\n';
    out << "cntn forwards (plain):       " << num_g(c.cntn_plain) << '\n';
    out << "speedup with augmentation:    " << fixed(100.0 * (c.speedup_aug() - 1.0), 1) << "%\n";
    out << "speedup without augmentation: " << fixed(100.0 * (c.speedup_plain() - 1.0), 1) << "%\n";
    out << "instrumented baseline forwards per iteration: " << coteach_forwards(batch, noise_rate) << '\n';
    return 0;
}

}  // namespace cntn
