#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fpq/adaround.hpp"
#include "fpq/formatsearch.hpp"

namespace fpq::cli {

struct InspectArgs {
  std::string container;
  std::string manifest;
  int values = 0;
};

struct QuantizeArgs {
  std::string input;
  std::string output;
  std::string format;               // ExMy
  std::optional<double> bias;
  std::string manifest;
  bool int_mode = false;
  int bits = 8;
  std::vector<std::string> tensors;  // empty: all
};

struct SearchArgs {
  std::string model;
  std::string acts;
  std::string pipeline;
  std::string inputs;
  std::string output;
  int bitwidth = 8;
  int act_bitwidth = 8;
  int bias_candidates = kDefaultBiasCandidates;
  int init_samples = 128;
  int steps = 1;
  std::uint64_t seed = 0;
  bool propagate = false;
  bool int_mode = false;
  int bits = 8;
};

struct LearnArgs {
  std::string model;
  std::string manifest;
  std::string calib;
  std::string pipeline;
  std::string output;
  std::string masks_out;
  std::vector<std::string> tensors;
  int calib_samples = 0;  // 0: every captured sample
  std::string optimizer = "adam";
  LearnConfig config;
};

struct SimulateArgs {
  std::string pipeline;
  std::string model;
  std::string manifest;
  std::string input;
  std::string input_name;
  std::string csv;
  std::string output;
  int steps = 1;
};

struct ReportArgs {
  std::string model;
  std::string manifest;
  std::string csv;
};

int run_inspect(const InspectArgs& args);
int run_quantize(const QuantizeArgs& args);
int run_search(const SearchArgs& args);
int run_learn(const LearnArgs& args);
int run_simulate(const SimulateArgs& args);
int run_report(const ReportArgs& args);

}  // namespace fpq::cli
