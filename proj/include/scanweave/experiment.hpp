#pragma once

// End-to-end experiment grid: phantom -> mask -> simulated scan ->
// reconstruction -> metrics, with the invariant suite checked per cell.

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "scanweave/config.hpp"
#include "scanweave/fusion.hpp"
#include "scanweave/mask.hpp"
#include "scanweave/masknet.hpp"
#include "scanweave/phantom.hpp"

namespace scanweave::pipeline {

enum class MaskMethod { kRandom, kGradient, kNetm };
MaskMethod parse_mask_method(std::string_view name);
std::string_view to_string(MaskMethod m);

/// Mask for a guide image by any method. netm requires `network`.
SamplingMask make_mask(MaskMethod method, const SpectralCube& guide, double rate, std::uint64_t seed,
                       mask::Binarizer binarizer, const masknet::MaskNetParams* network = nullptr);

struct NetmTraining {
  int corpus = 200;
  int size = 32;
  int epochs = 50;
  double rate = 0.1;  ///< one network, trained at this rate, serves every rate
};

struct ReportRow;

struct ExperimentConfig {
  std::vector<PhantomSpec> phantoms = default_suite();
  std::vector<std::string> mask_methods{"random", "gradient", "netm"};
  std::vector<std::string> recon_methods{"harmonic", "fusion"};
  std::vector<double> rates{0.05, 0.1, 0.2};
  mask::Binarizer binarizer = mask::Binarizer::kBernoulli;
  fusion::FusionConfig fusion;
  NetmTraining netm_training;
  std::shared_ptr<const masknet::MaskNetParams> netm;  ///< trained on demand when null
  std::uint64_t seed = 1;
  int threads = 1;
  bool deterministic = false;  ///< seconds column written as 0
  std::optional<std::filesystem::path> output_dir;
  std::function<void(const std::string&)> log;
  /// Called once per fusion cell with its row (metrics filled in) and the
  /// solver result. Calls are serialized.
  std::function<void(const ReportRow&, const fusion::FusionResult&)> on_fusion;

  /// Keys: phantoms, mask_methods, recon_methods, rates, binarizer, seed,
  /// threads, deterministic, width, height, bands, noise_sigma, netm_params,
  /// netm_corpus, netm_size, netm_epochs, netm_rate, output_dir, and
  /// fusion.<field> for the fusion solver. Relative paths resolve against `base`.
  static ExperimentConfig from_config(const KeyValueConfig& kv, const std::filesystem::path& base = {});
};

struct ReportRow {
  std::string phantom;
  std::string mask_method;
  std::string binarizer;
  double rate = 0.0;
  std::string recon_method;
  double rmse = 0.0;
  double psnr_db = 0.0;
  double sam_deg = 0.0;
  double seconds = 0.0;
  std::string error;  ///< empty on success
};

struct ExperimentReport {
  std::vector<ReportRow> rows;
  std::vector<std::string> invariant_failures;
  std::vector<std::string> errors;

  bool invariants_hold() const { return invariant_failures.empty(); }
  std::string csv() const;
};

inline constexpr std::string_view kReportHeader =
    "phantom,mask_method,binarizer,rate,recon_method,rmse,psnr_db,sam_deg,seconds";

ExperimentReport run_experiment(const ExperimentConfig& config);

/// The network used for netm cells when none is supplied.
masknet::MaskNetParams train_default_netm(const NetmTraining& training, std::uint64_t seed);

}  // namespace scanweave::pipeline
