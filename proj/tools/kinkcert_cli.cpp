// Command-line front end: single trials, Monte Carlo estimates, the
// comparison/shift/trajectory experiments, reference spectra, and
// distribution assumption checks. Emits CSV (default) or JSON.

#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "kinkcert/experiments.hpp"
#include "kinkcert/montecarlo.hpp"
#include "kinkcert/trial.hpp"

namespace kc = kinkcert;
using nlohmann::json;

namespace {

struct CommonOpts {
    kc::TrialConfig cfg;
    std::string h_spec = "auto";
    std::string optimizer = "gd";
    double delta_shift = 0.0;
    long trials = 10000;
    int threads = 0;
    std::string out_path;
    std::string format = "csv";
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->set_help_flag("--help", "print this help message and exit"); // frees -h for --h
    cmd->add_option("--m", o.cfg.m, "hidden width");
    cmd->add_option("--n", o.cfg.n, "dataset size (default m^2)");
    cmd->add_option("--trials", o.trials, "Monte Carlo repetitions");
    cmd->add_option("--seed", o.cfg.seed, "base seed");
    cmd->add_option("--optimizer", o.optimizer, "gd|sgd")
        ->check(CLI::IsMember({"gd", "sgd"}));
    cmd->add_option("--batch-size", o.cfg.batch_size, "SGD batch size (default 16)");
    cmd->add_option("--h", o.h_spec, "step size: auto | <float> | c/m:<c>");
    cmd->add_option("--alpha", o.cfg.alpha, "LeakyReLU slope");
    cmd->add_option("--delta-shift", o.delta_shift, "vertical shift of the data distribution");
    cmd->add_flag("--early-stop", o.cfg.early_stop, "enable early stopping");
    cmd->add_option("--max-steps", o.cfg.max_steps, "step cap (0 = default)");
    cmd->add_option("--x-target", o.cfg.x_target, "kink crossing boundary");
    cmd->add_option("--threads", o.threads, "worker threads (0 = hardware)");
    cmd->add_option("--out", o.out_path, "output file (default stdout)");
    cmd->add_option("--format", o.format, "csv|json")->check(CLI::IsMember({"csv", "json"}));
}

kc::HMode parse_h(const std::string& spec) {
    if (spec == "auto") return kc::HMode::automatic();
    if (spec.rfind("c/m:", 0) == 0) return kc::HMode::scaled(kc::detail::parse_double(spec.substr(4)));
    return kc::HMode::fixed(kc::detail::parse_double(spec));
}

kc::TrialConfig finalize(const CommonOpts& o) {
    kc::TrialConfig cfg = o.cfg;
    cfg.h_mode = parse_h(o.h_spec);
    cfg.optimizer = o.optimizer == "sgd" ? kc::Optimizer::Sgd : kc::Optimizer::Gd;
    cfg.dist = kc::example_distribution(o.delta_shift);
    cfg.validate();
    return cfg;
}

// Writes to --out or stdout; files get LF endings via binary mode.
void emit(const CommonOpts& o, const std::string& text) {
    if (o.out_path.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream os(o.out_path, std::ios::binary);
    if (!os) throw kc::ConfigError("cannot open for writing: " + o.out_path);
    os << text;
}

json config_json(const kc::TrialConfig& cfg) {
    json j;
    j["m"] = cfg.m;
    j["n"] = cfg.resolved_n();
    j["optimizer"] = cfg.optimizer == kc::Optimizer::Gd ? "gd" : "sgd";
    switch (cfg.h_mode.kind) {
        case kc::HMode::Kind::Auto: j["h"] = "auto"; break;
        case kc::HMode::Kind::Fixed: j["h"] = cfg.h_mode.value; break;
        case kc::HMode::Kind::Scaled: j["h"] = "c/m:" + std::to_string(cfg.h_mode.value); break;
    }
    j["alpha"] = cfg.alpha;
    j["shift"] = cfg.dist.shift;
    j["early_stop"] = cfg.early_stop;
    j["max_steps"] = cfg.resolved_max_steps();
    j["x_target"] = cfg.x_target;
    j["seed"] = cfg.seed;
    j["batch_size"] = cfg.batch_size;
    return j;
}

json result_json(const kc::TrialResult& r) {
    json j;
    j["outcome"] = kc::outcome_name(r.outcome);
    j["steps_run"] = r.steps_run;
    if (r.first_crossing_step) j["first_crossing_step"] = *r.first_crossing_step;
    else j["first_crossing_step"] = nullptr;
    j["final_loss"] = r.final_loss;
    j["kappa_u_final"] = r.kappa_u_final;
    j["wall_time_s"] = r.wall_time_s;
    if (!r.error.empty()) j["error"] = r.error;
    return j;
}

int cmd_trial(const CommonOpts& o) {
    kc::TrialConfig cfg = finalize(o);
    kc::TrialResult r = kc::run_trial(cfg);
    if (o.format == "json") {
        json j = result_json(r);
        j["config"] = config_json(cfg);
        emit(o, j.dump(2) + "\n");
    } else {
        std::ostringstream os;
        os << "outcome,steps_run,first_crossing_step,final_loss,kappa_u_final,wall_time_s\n";
        os << kc::outcome_name(r.outcome) << ',' << r.steps_run << ',';
        if (r.first_crossing_step) os << *r.first_crossing_step;
        os << ',' << kc::detail::format_double(r.final_loss) << ','
           << kc::detail::format_double(r.kappa_u_final) << ','
           << kc::detail::format_double(r.wall_time_s) << '\n';
        emit(o, os.str());
    }
    return r.outcome == kc::Outcome::Aborted ? 3 : 0;
}

int cmd_montecarlo(const CommonOpts& o) {
    kc::TrialConfig cfg = finalize(o);
    kc::MonteCarloReport rep = kc::monte_carlo(cfg, o.trials, o.threads);
    if (o.format == "json") {
        json j;
        j["trials"] = rep.trials;
        j["crossings"] = rep.crossings;
        j["p_hat"] = rep.p_hat;
        j["wilson_ci_95"] = {rep.ci_lo, rep.ci_hi};
        j["counts"] = {{"crossed", rep.counts.crossed},
                       {"certified_never", rep.counts.certified},
                       {"early_stopped_no_cross", rep.counts.early_stopped},
                       {"max_steps_no_cross", rep.counts.max_steps},
                       {"aborted", rep.counts.aborted}};
        j["config"] = config_json(cfg);
        emit(o, j.dump(2) + "\n");
    } else {
        std::ostringstream os;
        os << "m,n,trials,crossings,p_hat,ci_lo,ci_hi,certified,early_stopped,max_steps_hits,"
              "aborted\n";
        os << cfg.m << ',' << cfg.resolved_n() << ',' << rep.trials << ',' << rep.crossings << ','
           << kc::detail::format_double(rep.p_hat) << ',' << kc::detail::format_double(rep.ci_lo)
           << ',' << kc::detail::format_double(rep.ci_hi) << ',' << rep.counts.certified << ','
           << rep.counts.early_stopped << ',' << rep.counts.max_steps << ','
           << rep.counts.aborted << '\n';
        emit(o, os.str());
    }
    return 0;
}

std::vector<int> parse_m_list(const std::string& text) {
    std::vector<int> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ','))
        if (!item.empty()) out.push_back(static_cast<int>(kc::detail::parse_double(item)));
    if (out.empty()) throw kc::ConfigError("empty m list");
    return out;
}

std::string rows_to_string(const std::vector<kc::ExperimentRow>& rows, const std::string& format) {
    if (format == "json") {
        json arr = json::array();
        for (const auto& r : rows) {
            arr.push_back({{"variant", r.variant},
                           {"m", r.m},
                           {"n", r.n},
                           {"trials", r.trials},
                           {"crossings", r.crossings},
                           {"p_hat", r.p_hat},
                           {"ci_lo", r.ci_lo},
                           {"ci_hi", r.ci_hi},
                           {"max_steps_hits", r.max_steps_hits}});
        }
        return arr.dump(2) + "\n";
    }
    std::ostringstream os;
    kc::write_rows_csv(rows, os);
    return os.str();
}

int cmd_comparison(const CommonOpts& o, const std::string& variant_str,
                   const std::string& m_list_str) {
    kc::ComparisonVariant variant;
    if (variant_str == "gd") variant = kc::ComparisonVariant::Gd;
    else if (variant_str == "gd_es") variant = kc::ComparisonVariant::GdEs;
    else if (variant_str == "sgd_es") variant = kc::ComparisonVariant::SgdEs;
    else if (variant_str == "sgd_es_small_h") variant = kc::ComparisonVariant::SgdEsSmallH;
    else throw kc::ConfigError("unknown variant: " + variant_str);
    auto rows = kc::experiment_comparison(parse_m_list(m_list_str), variant, o.trials, o.cfg.seed,
                                          o.threads);
    emit(o, rows_to_string(rows, o.format));
    return 0;
}

int cmd_shift(const CommonOpts& o, const std::string& m_list_str) {
    auto rows = kc::experiment_shift(parse_m_list(m_list_str), o.delta_shift, o.trials, o.cfg.seed,
                                     o.threads);
    emit(o, rows_to_string(rows, o.format));
    return 0;
}

int cmd_trajectory(const CommonOpts& o, const std::string& data_path) {
    kc::TrialConfig cfg = finalize(o);
    kc::Dataset data = data_path.empty()
                           ? kc::stand_in_trajectory_dataset(300, kc::split_seed(cfg.seed, 9))
                           : kc::read_dataset_csv(data_path);
    kc::TrajectoryResult traj = kc::trajectory_run(data, cfg);
    if (o.format == "json") {
        json j;
        j["loss_opt"] = traj.loss_opt;
        j["resolved_h"] = traj.resolved_h;
        if (traj.certified_step) j["certified_step"] = *traj.certified_step;
        if (traj.crossed_step) j["crossed_step"] = *traj.crossed_step;
        json pts = json::array();
        for (const auto& pt : traj.points) {
            json p;
            p["k"] = pt.k;
            p["loss_gap"] = pt.loss_gap;
            p["gap"] = {pt.gap[0], pt.gap[1], pt.gap[2], pt.gap[3]};
            p["kinks"] = pt.kinks;
            pts.push_back(std::move(p));
        }
        j["points"] = std::move(pts);
        j["config"] = config_json(cfg);
        emit(o, j.dump(2) + "\n");
    } else {
        std::ostringstream os;
        kc::write_trajectory_csv(traj, cfg.m, os);
        emit(o, os.str());
    }
    return 0;
}

int cmd_spectra(const CommonOpts& o, long seeds) {
    kc::TrialConfig cfg = finalize(o);
    std::ostringstream os;
    json arr = json::array();
    if (o.format == "csv")
        os << "m,seed,lambda_1,lambda_2,lambda_3,lambda_4,inv_lambda_max,s_total,s_top\n";
    for (long s = 0; s < seeds; ++s) {
        kc::TrialConfig c = cfg;
        c.seed = kc::split_seed(cfg.seed, static_cast<std::uint64_t>(s));
        kc::SpectraInfo info = kc::spectra_for_config(c);
        if (o.format == "csv") {
            os << info.m << ',' << info.seed;
            for (double v : info.eigvals) os << ',' << kc::detail::format_double(v);
            os << ',' << kc::detail::format_double(info.inv_lambda_max) << ','
               << kc::detail::format_double(info.s_total) << ','
               << kc::detail::format_double(info.s_top) << '\n';
        } else {
            arr.push_back({{"m", info.m},
                           {"seed", info.seed},
                           {"eigvals", {info.eigvals[0], info.eigvals[1], info.eigvals[2],
                                        info.eigvals[3]}},
                           {"inv_lambda_max", info.inv_lambda_max},
                           {"s_total", info.s_total},
                           {"s_top", info.s_top}});
        }
    }
    emit(o, o.format == "csv" ? os.str() : arr.dump(2) + "\n");
    return 0;
}

kc::FiniteDistribution read_distribution_csv(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw kc::ConfigError("cannot open distribution file: " + path);
    std::string line;
    if (!std::getline(is, line)) throw kc::ConfigError("empty distribution file");
    auto header = kc::detail::split_csv_line(line);
    if (header.size() != 3 || header[0] != "x" || header[1] != "y" || header[2] != "prob")
        throw kc::ConfigError("expected distribution header 'x,y,prob'");
    kc::FiniteDistribution dist;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        auto f = kc::detail::split_csv_line(line);
        if (f.size() != 3) throw kc::ConfigError("expected three columns per atom");
        dist.atoms.push_back({kc::detail::parse_double(f[0]), kc::detail::parse_double(f[1]),
                              kc::detail::parse_double(f[2])});
    }
    return dist;
}

int cmd_check_dist(const CommonOpts& o, const std::string& dist_path) {
    kc::FiniteDistribution dist =
        dist_path.empty() ? kc::example_distribution(o.delta_shift) : read_distribution_csv(dist_path);
    dist.shift = dist_path.empty() ? dist.shift : o.delta_shift;
    kc::AssumptionReport rep = kc::check_assumptions(dist);
    if (o.format == "json") {
        json j;
        j["p1_invertible_pos"] = rep.p1_invertible_pos;
        j["p1_invertible_neg"] = rep.p1_invertible_neg;
        j["p2_gap"] = rep.p2_gap;
        j["p3_psi_q_zero"] = rep.p3_psi_q_zero;
        j["p4_excess"] = rep.p4_excess;
        j["all_satisfied"] = rep.all();
        emit(o, j.dump(2) + "\n");
    } else {
        std::ostringstream os;
        os << "p1_invertible_pos,p1_invertible_neg,p2_gap,p3_psi_q_zero,p4_excess,all_satisfied\n";
        os << rep.p1_invertible_pos << ',' << rep.p1_invertible_neg << ','
           << kc::detail::format_double(rep.p2_gap) << ',' << rep.p3_psi_q_zero << ','
           << kc::detail::format_double(rep.p4_excess) << ',' << rep.all() << '\n';
        emit(o, os.str());
    }
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-layer (Leaky)ReLU gradient-descent dynamics, kink-crossing Monte Carlo "
                 "experiments, and run-forever kink confinement certificates"};
    app.require_subcommand(1);

    CommonOpts o;
    std::string variant = "gd";
    std::string m_list = "16,32,64";
    std::string data_path;
    std::string dist_path;
    long spectra_seeds = 1;

    CLI::App* trial = app.add_subcommand("trial", "run a single trial");
    add_common(trial, o);
    CLI::App* mc = app.add_subcommand("montecarlo", "Monte Carlo crossing probability");
    add_common(mc, o);
    CLI::App* comparison =
        app.add_subcommand("comparison", "crossing probability vs width for one variant");
    add_common(comparison, o);
    comparison->add_option("--variant", variant, "gd|gd_es|sgd_es|sgd_es_small_h")
        ->check(CLI::IsMember({"gd", "gd_es", "sgd_es", "sgd_es_small_h"}));
    comparison->add_option("--m-list", m_list, "comma-separated widths");
    CLI::App* shift = app.add_subcommand("shift", "crossing probability under a y-shift");
    add_common(shift, o);
    shift->add_option("--m-list", m_list, "comma-separated widths");
    CLI::App* trajectory = app.add_subcommand("trajectory", "single-run loss/kink trajectory");
    add_common(trajectory, o);
    trajectory->add_option("--data", data_path, "dataset CSV (default: stand-in generator)");
    CLI::App* spectra = app.add_subcommand("spectra", "reference operator spectrum");
    add_common(spectra, o);
    spectra->add_option("--seeds", spectra_seeds, "number of seeds to report");
    CLI::App* check = app.add_subcommand("check-dist", "verify distribution assumptions");
    add_common(check, o);
    check->add_option("--dist-file", dist_path, "atoms CSV with header x,y,prob");

    try {
        app.parse(argc, argv);
        if (trial->parsed()) return cmd_trial(o);
        if (mc->parsed()) return cmd_montecarlo(o);
        if (comparison->parsed()) return cmd_comparison(o, variant, m_list);
        if (shift->parsed()) return cmd_shift(o, m_list);
        if (trajectory->parsed()) return cmd_trajectory(o, data_path);
        if (spectra->parsed()) return cmd_spectra(o, spectra_seeds);
        if (check->parsed()) return cmd_check_dist(o, dist_path);
        return 2;
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const kc::ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const kc::DomainError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const kc::SingularError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    } catch (const kc::NumericError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return 3;
    }
}
