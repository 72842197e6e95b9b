// scanweave command line: phantom, scan, mask, inpaint, train-netm, metrics, experiment.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "scanweave/config.hpp"
#include "scanweave/error.hpp"
#include "scanweave/experiment.hpp"
#include "scanweave/fusion.hpp"
#include "scanweave/harmonic.hpp"
#include "scanweave/io.hpp"
#include "scanweave/mask.hpp"
#include "scanweave/masknet.hpp"
#include "scanweave/metrics.hpp"
#include "scanweave/phantom.hpp"

namespace fs = std::filesystem;
using namespace scanweave;

namespace {

struct Globals {
  std::uint64_t seed = 1;
  int threads = 1;
  bool verbose = false;
};

void note(const Globals& g, const std::string& msg) {
  if (g.verbose) std::cerr << msg << '\n';
}

SpectralCube cube_from_mask(const SamplingMask& m) {
  SpectralCube c(m.width(), m.height(), 1);
  for (std::size_t p = 0; p < m.pixels(); ++p) c.matrix()(0, static_cast<Eigen::Index>(p)) = m[p] ? 1.0 : 0.0;
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adaptive sampling masks and RGB-guided spectral inpainting"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads")->capture_default_str()->check(CLI::PositiveNumber);
  app.add_flag("--verbose,-v", g.verbose, "Progress on stderr");

  int exit_code = 0;

  // phantom
  auto* phantom = app.add_subcommand("phantom", "Generate a synthetic phantom");
  std::string ph_out;
  pipeline::PhantomSpec ph_spec;
  std::string ph_preset;
  phantom->add_option("--out-dir", ph_out, "Output directory")->required();
  phantom->add_option("--preset", ph_preset, "visible or hidden-disk");
  auto* o_w = phantom->add_option("--width", ph_spec.width)->capture_default_str();
  auto* o_h = phantom->add_option("--height", ph_spec.height)->capture_default_str();
  auto* o_b = phantom->add_option("--bands", ph_spec.bands)->capture_default_str();
  auto* o_e = phantom->add_option("--endmembers", ph_spec.endmembers)->capture_default_str();
  auto* o_s = phantom->add_option("--shapes", ph_spec.shapes)->capture_default_str();
  auto* o_d = phantom->add_option("--hidden", ph_spec.hidden_disks, "Hidden disks")->capture_default_str();
  auto* o_r = phantom->add_option("--hidden-radius", ph_spec.hidden_radius)->capture_default_str();
  auto* o_n = phantom->add_option("--noise", ph_spec.noise_sigma, "Scan noise sigma recorded in the manifest")
                  ->capture_default_str();
  phantom->callback([&, o_w, o_h, o_b, o_e, o_s, o_d, o_r, o_n] {
    if (!ph_preset.empty()) {
      const pipeline::PhantomSpec given = ph_spec;
      bool found = false;
      for (const auto& s : pipeline::default_suite(g.seed)) {
        if (s.name == ph_preset) {
          ph_spec = s;
          found = true;
        }
      }
      if (!found) throw ParameterError("unknown preset: " + ph_preset);
      // explicit flags override the preset
      if (o_w->count()) ph_spec.width = given.width;
      if (o_h->count()) ph_spec.height = given.height;
      if (o_b->count()) ph_spec.bands = given.bands;
      if (o_e->count()) ph_spec.endmembers = given.endmembers;
      if (o_s->count()) ph_spec.shapes = given.shapes;
      if (o_d->count()) ph_spec.hidden_disks = given.hidden_disks;
      if (o_r->count()) ph_spec.hidden_radius = given.hidden_radius;
      if (o_n->count()) ph_spec.noise_sigma = given.noise_sigma;
    }
    ph_spec.seed = g.seed;
    const auto ph = pipeline::phantom_gen(ph_spec);
    fs::create_directories(ph_out);
    const fs::path dir(ph_out);
    io::write_spcb(dir / "truth.spcb", ph.truth);
    io::write_spcb(dir / "visible.spcb", SpectralCube(ph.truth.width(), ph.truth.height(), ph.visible));
    io::write_spcb(dir / "nonvisible.spcb", SpectralCube(ph.truth.width(), ph.truth.height(), ph.nonvisible));
    io::write_ppm(dir / "rgb.ppm", ph.rgb);
    io::write_pbm(dir / "hidden.pbm", SamplingMask(ph.truth.width(), ph.truth.height(), ph.hidden_support, 0.0),
                  io::PbmEncoding::kPlain);
    std::ofstream(dir / "manifest.txt") << ph.manifest;
    note(g, "wrote phantom to " + ph_out);
  });

  // scan
  auto* scan = app.add_subcommand("scan", "Simulate a raster scan under a mask");
  std::string sc_cube, sc_mask, sc_out;
  double sc_sigma = 0.0;
  scan->add_option("--cube", sc_cube)->required()->check(CLI::ExistingFile);
  scan->add_option("--mask", sc_mask)->required()->check(CLI::ExistingFile);
  scan->add_option("--sigma", sc_sigma, "Additive Gaussian noise")->capture_default_str();
  scan->add_option("--out", sc_out, "Masked cube, unsampled pixels zero")->required();
  scan->callback([&] {
    const auto truth = io::read_spcb(fs::path(sc_cube));
    const auto m = io::read_pbm(fs::path(sc_mask));
    const auto res = pipeline::scan_simulate(truth, m, sc_sigma, g.seed);
    SpectralCube out(truth.width(), truth.height(), embed(res.sampled, res.selection));
    io::write_spcb(fs::path(sc_out), out);
    std::printf("sampled %zu of %zu pixels, speedup %.2fx\n", res.selection.kept(), truth.pixels(), res.speedup);
  });

  // mask
  auto* maskcmd = app.add_subcommand("mask", "Generate a sampling mask from a guide image");
  std::string mk_method = "random", mk_in, mk_out, mk_bin = "bernoulli", mk_params, mk_encoding = "binary";
  double mk_rate = 0.1;
  maskcmd->add_option("--method", mk_method)->check(CLI::IsMember({"random", "gradient", "netm"}))->capture_default_str();
  maskcmd->add_option("--rate", mk_rate)->required()->check(CLI::Range(0.0, 1.0));
  maskcmd->add_option("--in", mk_in, "Guide image (PPM/PGM)")->required()->check(CLI::ExistingFile);
  maskcmd->add_option("--out", mk_out)->required();
  maskcmd->add_option("--binarize", mk_bin)->check(CLI::IsMember({"bernoulli", "topk"}))->capture_default_str();
  maskcmd->add_option("--params", mk_params, "Network parameters (.snwt) for netm");
  maskcmd->add_option("--encoding", mk_encoding)->check(CLI::IsMember({"plain", "binary"}))->capture_default_str();
  maskcmd->callback([&] {
    const auto guide = io::read_pnm(fs::path(mk_in));
    masknet::MaskNetParams net;
    const auto method = pipeline::parse_mask_method(mk_method);
    if (method == pipeline::MaskMethod::kNetm) {
      if (mk_params.empty()) throw ParameterError("--method netm needs --params");
      net = masknet::load_params(fs::path(mk_params));
    }
    const auto m = pipeline::make_mask(method, guide, mk_rate, g.seed, mask::parse_binarizer(mk_bin), &net);
    io::write_pbm(fs::path(mk_out), m, mk_encoding == "plain" ? io::PbmEncoding::kPlain : io::PbmEncoding::kBinary);
    std::printf("mask %dx%d, %zu samples, realized rate %.4f\n", m.width(), m.height(), m.count(), m.realized_rate());
  });

  // inpaint
  auto* inpaint = app.add_subcommand("inpaint", "Reconstruct a full cube from a scan");
  std::string ip_method = "harmonic", ip_cube, ip_mask, ip_rgb, ip_config, ip_out, ip_trace, ip_truth, ip_backend = "cg";
  inpaint->add_option("--method", ip_method)->check(CLI::IsMember({"harmonic", "fusion"}))->capture_default_str();
  inpaint->add_option("--cube", ip_cube, "Scanned cube (unsampled pixels ignored)")->required()->check(CLI::ExistingFile);
  inpaint->add_option("--mask", ip_mask)->required()->check(CLI::ExistingFile);
  inpaint->add_option("--rgb", ip_rgb, "Guide RGB image, required for fusion");
  inpaint->add_option("--config", ip_config, "Fusion key = value file");
  inpaint->add_option("--out", ip_out)->required();
  inpaint->add_option("--trace", ip_trace, "Fusion objective trace CSV");
  inpaint->add_option("--truth", ip_truth, "Ground truth cube for the trace RMSE column");
  inpaint->add_option("--backend", ip_backend, "Harmonic solver")
      ->check(CLI::IsMember({"cg", "jacobi", "gauss-seidel"}))
      ->capture_default_str();
  inpaint->callback([&] {
    const auto cube = io::read_spcb(fs::path(ip_cube));
    const auto m = io::read_pbm(fs::path(ip_mask));
    if (m.width() != cube.width() || m.height() != cube.height()) throw DimensionError("mask and cube differ in size");
    const SelectionOperator sel(m);
    const Matrix x = subsample(cube, sel);
    if (ip_method == "harmonic") {
      recon::HarmonicOptions ho;
      ho.backend = recon::parse_backend(ip_backend);
      const auto res = recon::harmonic_inpaint_cube(x, m, ho, g.threads);
      if (!res.converged) std::cerr << "warning: harmonic solve stopped at residual " << res.max_residual << '\n';
      io::write_spcb(fs::path(ip_out), res.cube);
      return;
    }
    if (ip_rgb.empty()) throw ParameterError("--method fusion needs --rgb");
    const auto rgb = io::read_pnm(fs::path(ip_rgb));
    fusion::FusionConfig fc;
    if (!ip_config.empty()) fc = fusion::FusionConfig::from_config(KeyValueConfig::load(ip_config));
    fc.seed = g.seed;
    fc.threads = g.threads;
    std::optional<SpectralCube> truth;
    if (!ip_truth.empty()) truth = io::read_spcb(fs::path(ip_truth));
    const auto res = fusion::fuse_inpaint(x, m, rgb, fc, truth ? &truth->matrix() : nullptr);
    note(g, "fusion " + res.stop_reason + " after " + std::to_string(res.iterations) + " iterations");
    io::write_spcb(fs::path(ip_out), SpectralCube(cube.width(), cube.height(), clamp_unit(res.y)));
    if (!ip_trace.empty()) {
      std::ofstream t(ip_trace);
      fusion::write_trace_csv(t, res.trace);
    }
  });

  // train-netm
  auto* train = app.add_subcommand("train-netm", "Train the mask network");
  std::string tr_corpus, tr_out, tr_recon = "normconv";
  int tr_synthetic = 0, tr_size = 32;
  double tr_rate = 0.1;
  masknet::TrainConfig tc;
  train->add_option("--corpus", tr_corpus, "Directory of PPM/PGM training images");
  train->add_option("--synthetic", tr_synthetic, "Use this many synthetic edge images instead");
  train->add_option("--size", tr_size, "Synthetic image size")->capture_default_str();
  train->add_option("--rate", tr_rate)->required()->check(CLI::Range(0.0, 1.0));
  train->add_option("--epochs", tc.epochs)->capture_default_str();
  train->add_option("--batch", tc.batch_size)->capture_default_str();
  train->add_option("--lr", tc.learning_rate)->capture_default_str();
  train->add_option("--features", tc.architecture.features)->capture_default_str();
  train->add_option("--blocks", tc.architecture.blocks)->capture_default_str();
  train->add_flag("--batch-norm", tc.architecture.batch_norm);
  train->add_option("--reconstructor", tr_recon)->check(CLI::IsMember({"normconv", "harmonic"}))->capture_default_str();
  train->add_option("--out", tr_out)->required();
  train->callback([&] {
    std::vector<SpectralCube> corpus;
    if (!tr_corpus.empty()) {
      corpus = io::read_image_directory(tr_corpus);
    } else if (tr_synthetic > 0) {
      corpus = masknet::synthetic_edge_corpus(tr_synthetic, tr_size, g.seed);
    } else {
      throw ParameterError("give --corpus or --synthetic");
    }
    tc.seed = g.seed;
    if (tr_recon == "harmonic") tc.reconstructor.kind = masknet::ReconstructorKind::kWeightedHarmonic;
    const auto res = masknet::train_netm(corpus, tr_rate, tc);
    for (std::size_t e = 0; e < res.epoch_losses.size(); ++e) {
      note(g, "epoch " + std::to_string(e + 1) + " loss " + std::to_string(res.epoch_losses[e]));
    }
    if (res.diverged) std::cerr << "warning: training diverged; saving the last good parameters\n";
    masknet::save_params(fs::path(tr_out), res.params);
    std::printf("trained %d steps, final loss %.6g\n", res.steps,
                res.epoch_losses.empty() ? 0.0 : res.epoch_losses.back());
  });

  // metrics
  auto* met = app.add_subcommand("metrics", "Compare two cubes");
  std::string mt_a, mt_b;
  bool mt_header = false;
  met->add_option("--a", mt_a)->required()->check(CLI::ExistingFile);
  met->add_option("--b", mt_b, "Reference cube")->required()->check(CLI::ExistingFile);
  met->add_flag("--header", mt_header, "Print the column names first");
  met->callback([&] {
    const auto a = io::read_spcb(fs::path(mt_a));
    const auto b = io::read_spcb(fs::path(mt_b));
    if (!a.same_shape(b)) throw DimensionError("cubes differ in shape");
    const auto s = metrics::summarize(a.matrix(), b.matrix());
    if (mt_header) std::printf("rmse,psnr_db,sam_deg,skipped_pixels\n");
    std::printf("%.6f,%.4f,%.4f,%zu\n", s.rmse, s.psnr_db, s.sam_deg, s.skipped_pixels);
  });

  // experiment
  auto* exp = app.add_subcommand("experiment", "Run the phantom x mask x reconstruction grid");
  std::string ex_config, ex_out, ex_dir;
  bool ex_det = false;
  exp->add_option("--config", ex_config, "Experiment key = value file")->check(CLI::ExistingFile);
  exp->add_option("--out", ex_out, "Report CSV (stdout when omitted)");
  exp->add_option("--out-dir", ex_dir, "Directory for masks, cubes and traces");
  exp->add_flag("--deterministic", ex_det, "Write 0 in the seconds column");
  exp->callback([&] {
    pipeline::ExperimentConfig cfg;
    if (!ex_config.empty()) {
      cfg = pipeline::ExperimentConfig::from_config(KeyValueConfig::load(ex_config), fs::path(ex_config).parent_path());
    }
    if (app.get_option("--seed")->count() > 0 || ex_config.empty()) {
      cfg.seed = g.seed;
      for (auto& p : cfg.phantoms) p.seed = g.seed;
    }
    if (app.get_option("--threads")->count() > 0) cfg.threads = g.threads;
    cfg.deterministic = cfg.deterministic || ex_det;
    if (!ex_dir.empty()) cfg.output_dir = ex_dir;
    if (g.verbose) cfg.log = [](const std::string& s) { std::cerr << s << '\n'; };
    const auto report = pipeline::run_experiment(cfg);
    if (ex_out.empty()) {
      std::cout << report.csv();
    } else {
      std::ofstream(ex_out) << report.csv();
    }
    for (const auto& e : report.errors) std::cerr << "error: " << e << '\n';
    for (const auto& f : report.invariant_failures) std::cerr << "invariant failed: " << f << '\n';
    if (!report.invariants_hold()) {
      exit_code = 2;
    } else if (!report.errors.empty()) {
      exit_code = 1;
    }
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "scanweave: " << e.what() << '\n';
    return 1;
  }
  return exit_code;
}
