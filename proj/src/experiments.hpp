#pragma once

#include <memory>
#include <string>

#include "config.hpp"
#include "grad.hpp"
#include "problems.hpp"
#include "trainer.hpp"
#include "valuenet.hpp"

namespace jfbctrl {

// Version stamped into every artifact header alongside the config hash.
inline constexpr int kArtifactFormatVersion = 1;

// Assemble domain objects from a validated config.
std::unique_ptr<ControlProblem> build_problem(const ExperimentConfig& cfg);
LqrProblem build_lqr(const ExperimentConfig& cfg);
MlpValueNetwork build_network(const ExperimentConfig& cfg, const ControlProblem& pb);
GradOptions build_grad_options(const ExperimentConfig& cfg);
TrainOptions build_train_options(const ExperimentConfig& cfg);

// Subcommand runners. Each validates the config, runs the experiment, and
// writes its artifacts under output.directory; every file carries a header
// with the config hash, seed, and format version. Config problems throw
// ConfigError, write failures IoError, everything else surfaces as the
// backend error it is.
void run_train(const ExperimentConfig& cfg);
void run_compare(const ExperimentConfig& cfg);
void run_diagnose(const ExperimentConfig& cfg);
void run_oracle(const ExperimentConfig& cfg);
void run_neighborhood(const ExperimentConfig& cfg);

}  // namespace jfbctrl
