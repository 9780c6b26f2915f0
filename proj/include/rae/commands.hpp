#pragma once

// Entry points behind the `rae` command-line tool. Each command takes a
// resolved RunConfig, writes its outputs (plus the config it ran with) and
// returns a summary for callers that want to inspect the results.

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "rae/config.hpp"
#include "rae/gradcheck.hpp"
#include "rae/sst.hpp"
#include "rae/training.hpp"

namespace rae {

enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitData = 2,
  kExitCheckFailed = 3,
};

struct TrainAeSummary {
  std::vector<double> train_mse;  // per epoch
  std::vector<double> dev_mse;
  std::filesystem::path best_checkpoint;
  std::filesystem::path latest_checkpoint;
};

TrainAeSummary cmd_train_ae(const RunConfig& config, std::ostream& log);

// Writes the CSV to config "output" when set, otherwise to `out`.
AeEvaluation cmd_eval_ae(const RunConfig& config, std::ostream& out);

void write_metrics_csv(std::ostream& os, const AeEvaluation& eval, std::size_t k);

// Returns the number of records written / decoded.
std::size_t cmd_encode(const RunConfig& config);
std::size_t cmd_decode(const RunConfig& config);

GradcheckReport cmd_gradcheck(const RunConfig& config, std::ostream& out);

struct TrainSstSummary {
  std::vector<double> train_loss;
  std::vector<double> five_all;  // on the dev file (train file when unset)
  std::filesystem::path model_path;
  std::filesystem::path head_path;
};

TrainSstSummary cmd_train_sst(const RunConfig& config, std::ostream& log);

struct SstMetricRow {
  SstMode mode;
  SstScore score;
};

std::vector<SstMetricRow> cmd_eval_sst(const RunConfig& config, std::ostream& out);

// Full command line: `rae <subcommand> [-c config] [key=value ...]`.
int run_cli(int argc, char** argv);

}  // namespace rae
