#include "scanweave/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "scanweave/error.hpp"
#include "scanweave/harmonic.hpp"
#include "scanweave/io.hpp"
#include "scanweave/metrics.hpp"
#include "scanweave/rng.hpp"

namespace scanweave::pipeline {

MaskMethod parse_mask_method(std::string_view name) {
  if (name == "random") return MaskMethod::kRandom;
  if (name == "gradient") return MaskMethod::kGradient;
  if (name == "netm") return MaskMethod::kNetm;
  throw ParameterError("unknown mask method: " + std::string(name));
}

std::string_view to_string(MaskMethod m) {
  switch (m) {
    case MaskMethod::kRandom:
      return "random";
    case MaskMethod::kGradient:
      return "gradient";
    case MaskMethod::kNetm:
      return "netm";
  }
  return "random";
}

SamplingMask make_mask(MaskMethod method, const SpectralCube& guide, double rate, std::uint64_t seed,
                       mask::Binarizer binarizer, const masknet::MaskNetParams* network) {
  switch (method) {
    case MaskMethod::kRandom:
      if (binarizer == mask::Binarizer::kTopK) {
        // exact-budget variant: top-k of a uniform random score
        ProbMap scores{guide.width(), guide.height(), std::vector<double>(guide.pixels()), rate};
        for (std::size_t p = 0; p < scores.values.size(); ++p) scores.values[p] = to_unit(counter_bits(seed, p, 0));
        return mask::binarize_topk(scores);
      }
      return mask::random_mask(guide.width(), guide.height(), rate, seed);
    case MaskMethod::kGradient:
      return mask::gradient_adaptive_mask(guide, rate, seed, binarizer);
    case MaskMethod::kNetm:
      if (network == nullptr) throw ParameterError("netm mask requested without a network");
      return masknet::netm_mask(*network, guide, rate, seed, binarizer);
  }
  throw ParameterError("unknown mask method");
}

namespace {

std::string rate_label(double rate) {
  std::ostringstream s;
  s << rate;
  return s.str();
}

std::string format_double(double v, const char* fmt) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

struct Group {
  std::size_t phantom;
  MaskMethod method;
  double rate;
};

struct GroupOutcome {
  std::vector<ReportRow> rows;
  std::vector<std::string> failures;
  std::vector<std::string> errors;
  std::vector<std::string> log;
};

}  // namespace

std::string ExperimentReport::csv() const {
  std::ostringstream out;
  out << kReportHeader << '\n';
  for (const auto& r : rows) {
    out << r.phantom << ',' << r.mask_method << ',' << r.binarizer << ',' << rate_label(r.rate) << ','
        << r.recon_method << ',' << format_double(r.rmse, "%.6f") << ',' << format_double(r.psnr_db, "%.4f") << ','
        << format_double(r.sam_deg, "%.4f") << ',' << format_double(r.seconds, "%.3f") << '\n';
  }
  return out.str();
}

masknet::MaskNetParams train_default_netm(const NetmTraining& training, std::uint64_t seed) {
  const auto corpus = masknet::synthetic_edge_corpus(training.corpus, training.size, derive_seed(seed, "netm-corpus"));
  masknet::TrainConfig tc;
  tc.epochs = training.epochs;
  tc.seed = derive_seed(seed, "netm-train");
  auto result = masknet::train_netm(corpus, training.rate, tc);
  if (result.diverged) throw TrainingDivergence("netm training diverged");
  return std::move(result.params);
}

ExperimentConfig ExperimentConfig::from_config(const KeyValueConfig& kv, const std::filesystem::path& base) {
  static const std::vector<std::string> known{
      "phantoms",   "mask_methods", "recon_methods", "rates",       "binarizer",  "seed",
      "threads",    "deterministic", "width",        "height",      "bands",      "noise_sigma",
      "netm_params", "netm_corpus", "netm_size",     "netm_epochs", "netm_rate",  "output_dir"};
  KeyValueConfig fusion_kv;
  for (const auto& [key, value] : kv.entries()) {
    if (key.rfind("fusion.", 0) == 0) {
      fusion_kv.set(key.substr(7), value);
    } else if (std::find(known.begin(), known.end(), key) == known.end()) {
      throw ParameterError("experiment config: unknown key '" + key + "'");
    }
  }
  ExperimentConfig c;
  c.seed = static_cast<std::uint64_t>(kv.get_int("seed", 1));
  c.threads = static_cast<int>(kv.get_int("threads", 1));
  c.deterministic = kv.get_bool("deterministic", false);
  c.mask_methods = kv.get_list("mask_methods", c.mask_methods);
  c.recon_methods = kv.get_list("recon_methods", c.recon_methods);
  c.rates = kv.get_double_list("rates", c.rates);
  c.binarizer = mask::parse_binarizer(kv.get_or("binarizer", "bernoulli"));
  for (const auto& m : c.mask_methods) parse_mask_method(m);
  for (const auto& r : c.recon_methods) {
    if (r != "harmonic" && r != "fusion") throw ParameterError("unknown reconstruction method: " + r);
  }
  for (double r : c.rates) {
    if (!(r > 0.0 && r < 1.0)) throw ParameterError("rates must lie in (0,1)");
  }

  const auto suite = default_suite(c.seed);
  const auto names = kv.get_list("phantoms", {"visible", "hidden-disk"});
  c.phantoms.clear();
  for (const auto& name : names) {
    auto it = std::find_if(suite.begin(), suite.end(), [&](const PhantomSpec& s) { return s.name == name; });
    if (it == suite.end()) throw ParameterError("unknown phantom: " + name);
    PhantomSpec s = *it;
    s.width = static_cast<int>(kv.get_int("width", s.width));
    s.height = static_cast<int>(kv.get_int("height", s.height));
    s.bands = static_cast<int>(kv.get_int("bands", s.bands));
    s.noise_sigma = kv.get_double("noise_sigma", s.noise_sigma);
    c.phantoms.push_back(s);
  }

  c.netm_training.corpus = static_cast<int>(kv.get_int("netm_corpus", c.netm_training.corpus));
  c.netm_training.size = static_cast<int>(kv.get_int("netm_size", c.netm_training.size));
  c.netm_training.epochs = static_cast<int>(kv.get_int("netm_epochs", c.netm_training.epochs));
  c.netm_training.rate = kv.get_double("netm_rate", c.netm_training.rate);
  auto resolve = [&](const std::string& p) {
    std::filesystem::path path(p);
    return path.is_relative() && !base.empty() ? base / path : path;
  };
  if (auto p = kv.get("netm_params")) {
    c.netm = std::make_shared<const masknet::MaskNetParams>(masknet::load_params(resolve(*p)));
  }
  if (auto p = kv.get("output_dir")) c.output_dir = resolve(*p);
  c.fusion = fusion::FusionConfig::from_config(fusion_kv);
  return c;
}

ExperimentReport run_experiment(const ExperimentConfig& config) {
  auto say = [&](const std::string& msg) {
    if (config.log) config.log(msg);
  };
  std::vector<MaskMethod> methods;
  for (const auto& m : config.mask_methods) methods.push_back(parse_mask_method(m));
  const bool want_harmonic =
      std::find(config.recon_methods.begin(), config.recon_methods.end(), "harmonic") != config.recon_methods.end();
  const bool want_fusion =
      std::find(config.recon_methods.begin(), config.recon_methods.end(), "fusion") != config.recon_methods.end();

  std::shared_ptr<const masknet::MaskNetParams> network = config.netm;
  if (!network && std::find(methods.begin(), methods.end(), MaskMethod::kNetm) != methods.end()) {
    say("training netm on " + std::to_string(config.netm_training.corpus) + " synthetic images");
    network = std::make_shared<const masknet::MaskNetParams>(train_default_netm(config.netm_training, config.seed));
  }

  std::vector<Phantom> phantoms;
  for (const auto& spec : config.phantoms) phantoms.push_back(phantom_gen(spec));
  if (config.output_dir) std::filesystem::create_directories(*config.output_dir);

  std::vector<Group> groups;
  for (std::size_t ph = 0; ph < phantoms.size(); ++ph) {
    for (MaskMethod m : methods) {
      for (double rate : config.rates) groups.push_back(Group{ph, m, rate});
    }
  }

  std::mutex observer_mutex;
  auto run_group = [&](const Group& g) {
    GroupOutcome out;
    const Phantom& ph = phantoms[g.phantom];
    const std::string label = ph.name + "_" + std::string(to_string(g.method)) + "_" + rate_label(g.rate);
    const std::string key = ph.name + ":" + std::string(to_string(g.method)) + ":" + rate_label(g.rate);
    auto base_row = [&](const std::string& recon) {
      ReportRow r;
      r.phantom = ph.name;
      r.mask_method = std::string(to_string(g.method));
      r.binarizer = std::string(mask::to_string(config.binarizer));
      r.rate = g.rate;
      r.recon_method = recon;
      return r;
    };
    auto fail_rows = [&](const std::string& what) {
      for (const auto& recon : config.recon_methods) {
        ReportRow r = base_row(recon);
        r.rmse = r.psnr_db = r.sam_deg = std::nan("");
        r.error = what;
        out.rows.push_back(r);
      }
      out.errors.push_back(label + ": " + what);
    };

    SamplingMask m;
    ScanResult scan;
    try {
      m = make_mask(g.method, ph.rgb, g.rate, derive_seed(config.seed, "mask:" + key), config.binarizer,
                    network.get());
      scan = scan_simulate(ph.truth, m, ph.noise_sigma, derive_seed(config.seed, "scan:" + key));
      if (config.output_dir) io::write_pbm(*config.output_dir / (label + ".pbm"), m);
    } catch (const std::exception& e) {
      fail_rows(e.what());
      return out;
    }

    std::optional<double> harmonic_rmse;
    std::optional<double> fusion_rmse;
    for (const auto& recon : config.recon_methods) {
      ReportRow row = base_row(recon);
      const auto t0 = std::chrono::steady_clock::now();
      try {
        Matrix y;
        std::optional<fusion::FusionResult> fusion_result;
        if (recon == "harmonic") {
          recon::HarmonicOptions ho;
          ho.tolerance = config.fusion.harmonic_tolerance;
          auto res = recon::harmonic_inpaint_cube(scan.sampled, m, ho);
          if (!res.converged) out.log.push_back(label + ": harmonic solve did not converge");
          y = std::move(res.cube.matrix());
        } else {
          fusion::FusionConfig fc = config.fusion;
          fc.seed = derive_seed(config.seed, "fusion:" + key);
          auto res = fusion::fuse_inpaint(scan.sampled, m, ph.rgb, fc, &ph.truth.matrix());
          if (!fusion::trace_monotone(res.trace)) out.failures.push_back(label + ": fusion objective increased");
          if (res.max_constraint_violation > 1e-6) {
            out.failures.push_back(label + ": constraints violated by " + std::to_string(res.max_constraint_violation));
          }
          if (config.output_dir) {
            std::ofstream trace(*config.output_dir / (label + "_fusion_trace.csv"));
            fusion::write_trace_csv(trace, res.trace);
          }
          out.log.push_back(label + ": fusion " + res.stop_reason + " after " + std::to_string(res.iterations) +
                            " iterations");
          fusion_result = std::move(res);
          y = fusion_result->y;
        }
        const auto summary = metrics::summarize(y, ph.truth.matrix());
        row.rmse = summary.rmse;
        row.psnr_db = summary.psnr_db;
        row.sam_deg = summary.sam_deg;
        if (fusion_result && config.on_fusion) {
          std::lock_guard lock(observer_mutex);
          config.on_fusion(row, *fusion_result);
        }
        (recon == "harmonic" ? harmonic_rmse : fusion_rmse) = summary.rmse;
        if (config.output_dir) {
          io::write_spcb(*config.output_dir / (label + "_" + recon + ".spcb"),
                         SpectralCube(ph.truth.width(), ph.truth.height(), clamp_unit(y)));
        }
      } catch (const std::exception& e) {
        row.rmse = row.psnr_db = row.sam_deg = std::nan("");
        row.error = e.what();
        out.errors.push_back(label + " " + recon + ": " + e.what());
      }
      const auto t1 = std::chrono::steady_clock::now();
      row.seconds = config.deterministic ? 0.0 : std::chrono::duration<double>(t1 - t0).count();
      out.rows.push_back(row);
    }
    if (want_harmonic && want_fusion && harmonic_rmse && fusion_rmse && *fusion_rmse > *harmonic_rmse) {
      out.failures.push_back(label + ": fusion RMSE " + std::to_string(*fusion_rmse) + " above harmonic RMSE " +
                             std::to_string(*harmonic_rmse));
    }
    return out;
  };

  std::vector<GroupOutcome> outcomes(groups.size());
  std::mutex log_mutex;
  auto worker = [&](std::atomic<std::size_t>& next) {
    for (std::size_t i = next++; i < groups.size(); i = next++) {
      outcomes[i] = run_group(groups[i]);
      std::lock_guard lock(log_mutex);
      for (const auto& line : outcomes[i].log) say(line);
    }
  };
  std::atomic<std::size_t> next{0};
  const int nthreads = std::max(1, std::min<int>(config.threads, static_cast<int>(groups.size())));
  if (nthreads == 1) {
    worker(next);
  } else {
    std::vector<std::thread> pool;
    for (int t = 0; t < nthreads; ++t) pool.emplace_back([&] { worker(next); });
    for (auto& th : pool) th.join();
  }

  ExperimentReport report;
  for (auto& o : outcomes) {
    report.rows.insert(report.rows.end(), o.rows.begin(), o.rows.end());
    report.invariant_failures.insert(report.invariant_failures.end(), o.failures.begin(), o.failures.end());
    report.errors.insert(report.errors.end(), o.errors.begin(), o.errors.end());
  }
  return report;
}

}  // namespace scanweave::pipeline
