#include <cstdio>
#include <exception>

#include "CLI11.hpp"
#include "cli_commands.hpp"
#include "fpq/error.hpp"

namespace {

int fail(int code, const char* message) {
  std::fprintf(stderr, "fpq: error: %s\n", message);
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  using namespace fpq::cli;
  CLI::App app{"Minifloat post-training quantization toolkit"};
  app.require_subcommand(1);

  InspectArgs inspect;
  auto* c_inspect = app.add_subcommand("inspect", "List tensors in a container");
  c_inspect->add_option("container", inspect.container, "Tensor container")->required();
  c_inspect->add_option("--manifest", inspect.manifest, "Check values against manifest formats");
  c_inspect->add_option("--values", inspect.values, "Print the first N values of each tensor");

  QuantizeArgs quant;
  auto* c_quant = app.add_subcommand("quantize", "Fake-quantize every tensor in a container");
  c_quant->add_option("input", quant.input, "Tensor container")->required();
  c_quant->add_option("-o,--output", quant.output, "Output container")->required();
  c_quant->add_option("--format", quant.format, "Encoding, e.g. E4M3");
  c_quant->add_option("--bias", quant.bias, "Exponent bias (default 2^(e-1))");
  c_quant->add_option("--manifest", quant.manifest, "Apply per-tensor manifest records");
  c_quant->add_flag("--int", quant.int_mode, "Asymmetric integer quantization");
  c_quant->add_option("--bits", quant.bits, "Integer bitwidth")->capture_default_str();
  c_quant->add_option("--tensor", quant.tensors, "Restrict to these tensors");

  SearchArgs search;
  auto* c_search = app.add_subcommand("search", "Assign a format and bias to every tensor");
  c_search->add_option("--model", search.model, "Weight container")->required();
  c_search->add_option("--acts", search.acts, "Captured activation container");
  c_search->add_option("--pipeline", search.pipeline, "Pipeline description (JSON)");
  c_search->add_option("--inputs", search.inputs, "Model inputs for --propagate");
  c_search->add_option("-o,--output", search.output, "Output manifest")->required();
  c_search->add_option("--bitwidth", search.bitwidth, "Weight bitwidth (4 or 8)")->capture_default_str();
  c_search->add_option("--act-bitwidth", search.act_bitwidth, "Activation bitwidth (4 or 8)")
      ->capture_default_str();
  c_search->add_option("--bias-candidates", search.bias_candidates, "Biases per encoding")
      ->capture_default_str();
  c_search->add_option("--init-samples", search.init_samples, "Activation samples searched")
      ->capture_default_str();
  c_search->add_option("--steps", search.steps, "Timesteps simulated by --propagate")
      ->capture_default_str();
  c_search->add_option("--seed", search.seed, "Sampling seed")->capture_default_str();
  c_search->add_flag("--propagate", search.propagate,
                     "Re-capture activations through the partially quantized pipeline");
  c_search->add_flag("--int", search.int_mode, "Integer baseline instead of searching");
  c_search->add_option("--bits", search.bits, "Integer bitwidth")->capture_default_str();

  LearnArgs learn;
  auto* c_learn = app.add_subcommand("learn-rounding", "Learn rounding directions for 4-bit weights");
  c_learn->add_option("--model", learn.model, "Weight container")->required();
  c_learn->add_option("--manifest", learn.manifest, "Manifest from search")->required();
  c_learn->add_option("--calib", learn.calib, "Captured activation container")->required();
  c_learn->add_option("--pipeline", learn.pipeline, "Pipeline description (JSON)")->required();
  c_learn->add_option("-o,--output", learn.output, "Output manifest")->required();
  c_learn->add_option("--masks-out", learn.masks_out, "Mask container (default next to output)");
  c_learn->add_option("--tensor", learn.tensors, "Restrict to these weights");
  c_learn->add_option("--calib-samples", learn.calib_samples, "Samples per layer (0: all)")
      ->capture_default_str();
  c_learn->add_option("--iters", learn.config.iterations, "Iterations")->capture_default_str();
  c_learn->add_option("--lr", learn.config.step_size, "Step size")->capture_default_str();
  c_learn->add_option("--batch", learn.config.batch_size, "Minibatch size")->capture_default_str();
  c_learn->add_option("--reg", learn.config.reg_weight, "Regularizer weight")->capture_default_str();
  c_learn->add_option("--optimizer", learn.optimizer, "adam or sgd")->capture_default_str();
  c_learn->add_option("--seed", learn.config.seed, "Minibatch seed")->capture_default_str();

  SimulateArgs sim;
  auto* c_sim = app.add_subcommand("simulate", "Run the pipeline quantized and in full precision");
  c_sim->add_option("--pipeline", sim.pipeline, "Pipeline description (JSON)")->required();
  c_sim->add_option("--model", sim.model, "Weight container")->required();
  c_sim->add_option("--manifest", sim.manifest, "Manifest (omit for full precision)");
  c_sim->add_option("--input", sim.input, "Input container")->required();
  c_sim->add_option("--input-name", sim.input_name, "Input tensor (default: first)");
  c_sim->add_option("--steps", sim.steps, "Timesteps")->capture_default_str();
  c_sim->add_option("--csv", sim.csv, "Per-layer CSV");
  c_sim->add_option("-o,--output", sim.output, "Quantized output container");

  ReportArgs report;
  auto* c_report = app.add_subcommand("report", "Per-tensor sparsity and error");
  c_report->add_option("--model", report.model, "Weight container")->required();
  c_report->add_option("--manifest", report.manifest, "Manifest");
  c_report->add_option("--csv", report.csv, "Per-tensor CSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(static_cast<int>(fpq::ErrorKind::kUsage), e.what());
  }

  try {
    if (c_inspect->parsed()) return run_inspect(inspect);
    if (c_quant->parsed()) return run_quantize(quant);
    if (c_search->parsed()) return run_search(search);
    if (c_learn->parsed()) return run_learn(learn);
    if (c_sim->parsed()) return run_simulate(sim);
    if (c_report->parsed()) return run_report(report);
  } catch (const fpq::Error& e) {
    return fail(static_cast<int>(e.kind()), e.what());
  } catch (const std::exception& e) {
    return fail(static_cast<int>(fpq::ErrorKind::kValidation), e.what());
  }
  return 0;
}
