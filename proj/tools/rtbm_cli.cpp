// Command-line front end: CSV in, JSON models and reports out, plus density
// and prediction curves for plotting. Every random choice flows from --seed,
// so repeated runs write byte-identical artifacts.

#include <cmath>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rtbm/io.hpp"
#include "rtbm/mixture.hpp"
#include "rtbm/riemann_theta.hpp"
#include "rtbm/tnn.hpp"
#include "rtbm/training.hpp"

namespace {

using nlohmann::json;
using namespace rtbm;

// Exit codes: 0 success, 2 usage, 3 data problems, 4 numerical failures.
int exit_class(ErrorCode code) {
  switch (code) {
    case ErrorCode::InvalidArgument:
      return 2;
    case ErrorCode::FileNotFound:
    case ErrorCode::IoError:
    case ErrorCode::ParseError:
    case ErrorCode::EmptyData:
    case ErrorCode::NonFiniteSample:
    case ErrorCode::MixedVisibleDims:
    case ErrorCode::DegenerateData:
    case ErrorCode::DimensionMismatch:
    case ErrorCode::ShapeMismatch:
    case ErrorCode::LengthMismatch:
    case ErrorCode::UnsupportedDim:
      return 3;
    default:
      return 4;
  }
}

std::string sig17(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

struct CommonFlags {
  std::string data_path;
  double clip = 0.0;  // <= 0 disables clipping
  double bound = 50.0;
  std::uint64_t seed = 0;
  int max_iters = 500;
  double tol = 1e-4;
  double sigma0 = 0.3;
  double learning_rate = 0.01;
  double init_scale = 1.0;
  int population = 0;
  std::string optimizer = "cma";
};

void add_train_flags(CLI::App* cmd, CommonFlags* flags) {
  cmd->add_option("--bound", flags->bound, "Parameter box bound");
  cmd->add_option("--seed", flags->seed, "Seed for init and optimizer");
  cmd->add_option("--max-iters", flags->max_iters, "Iteration cap");
  cmd->add_option("--tol", flags->tol, "Stall tolerance over a 10-step window");
  cmd->add_option("--sigma0", flags->sigma0, "CMA-ES initial step size");
  cmd->add_option("--learning-rate", flags->learning_rate, "Adam/SGD step size");
  cmd->add_option("--init-scale", flags->init_scale, "Random init scale");
  cmd->add_option("--population", flags->population,
                  "CMA-ES population (0 = default)");
  cmd->add_option("--optimizer", flags->optimizer, "cma, adam or sgd")
      ->check(CLI::IsMember({"cma", "adam", "sgd"}));
}

TrainConfig to_config(const CommonFlags& flags) {
  TrainConfig config;
  config.optimizer = flags.optimizer == "cma"    ? Optimizer::CmaEs
                     : flags.optimizer == "adam" ? Optimizer::Adam
                                                 : Optimizer::Sgd;
  config.bound = flags.bound;
  config.population = flags.population;
  config.max_iters = flags.max_iters;
  config.tol = flags.tol;
  config.seed = flags.seed;
  config.init_scale = flags.init_scale;
  config.sigma0 = flags.sigma0;
  config.learning_rate = flags.learning_rate;
  return config;
}

double clip_value(double clip) {
  return clip > 0.0 ? clip : std::numeric_limits<double>::infinity();
}

void parse_grid(const std::string& text, double* lo, double* hi, Index* points) {
  double a = 0.0;
  double b = 0.0;
  long n = 0;
  char tail = '\0';
  if (std::sscanf(text.c_str(), "%lf:%lf:%ld%c", &a, &b, &n, &tail) != 3)
    fail(ErrorCode::InvalidArgument, "--grid expects lo:hi:points");
  *lo = a;
  *hi = b;
  *points = static_cast<Index>(n);
}

Matrix parse_matrix_arg(const std::string& text, const std::string& name) {
  std::vector<std::vector<double>> rows;
  std::string row_text;
  std::istringstream stream(text);
  while (std::getline(stream, row_text, ';')) {
    std::vector<double> row;
    std::istringstream fields(row_text);
    std::string f;
    while (std::getline(fields, f, ',')) {
      try {
        std::size_t used = 0;
        const double x = std::stod(f, &used);
        if (used != f.size()) throw std::invalid_argument(f);
        row.push_back(x);
      } catch (const std::exception&) {
        fail(ErrorCode::InvalidArgument, name + ": bad number '" + f + "'");
      }
    }
    if (row.empty()) fail(ErrorCode::InvalidArgument, name + ": empty row");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) fail(ErrorCode::InvalidArgument, name + ": empty matrix");
  Matrix m(static_cast<Index>(rows.size()), static_cast<Index>(rows[0].size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows[0].size())
      fail(ErrorCode::InvalidArgument, name + ": ragged rows");
    for (std::size_t j = 0; j < rows[i].size(); ++j)
      m(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
  }
  return m;
}

void emit(const json& j) { std::cout << j.dump(2) << "\n"; }

// ---------------------------------------------------------------- fit-density

struct FitDensityArgs {
  CommonFlags flags;
  Index nv = 0;  // 0 = infer from data
  Index nh = 1;
  int mixture = 1;
  int phase = 1;
  std::string out_path;
  std::string report_path;
  std::string density_path;
  std::string grid = "-10:10:201";
};

int run_fit_density(const FitDensityArgs& args) {
  const CsvData csv = ingest_csv(args.flags.data_path, clip_value(args.flags.clip));
  const Index nv = csv.samples.rows();
  if (args.nv != 0 && args.nv != nv)
    fail(ErrorCode::InvalidArgument,
         "--nv " + std::to_string(args.nv) + " but data has " + std::to_string(nv) +
             " columns");
  if (args.nh < 1) fail(ErrorCode::InvalidArgument, "--nh must be at least 1");
  if (args.mixture < 1) fail(ErrorCode::InvalidArgument, "--mixture must be at least 1");

  const Phase phase = args.phase == 1 ? Phase::I : Phase::II;
  const TrainConfig config = to_config(args.flags);
  const bool gradient = config.optimizer != Optimizer::CmaEs;

  std::string model_json;
  TrainReport report;
  if (args.mixture == 1) {
    RtbmParams init =
        init_random(nv, args.nh, config.init_scale, config.seed);
    init.phase = phase;
    auto [model, rep] = gradient ? train_gradient(init, csv.samples, config)
                                 : train_ml(init, csv.samples, config);
    report = std::move(rep);
    model_json = model_to_json(model);
    if (!args.density_path.empty() && nv <= 2) {
      double lo = 0.0;
      double hi = 0.0;
      Index points = 0;
      parse_grid(args.grid, &lo, &hi, &points);
      save_text(args.density_path, density_grid_csv(model, lo, hi, points));
    }
  } else {
    MixtureModel init;
    init.omegas = Vector::Zero(args.mixture);
    for (int k = 0; k < args.mixture; ++k) {
      RtbmParams c = init_random(nv, args.nh, config.init_scale,
                                 config.seed + static_cast<std::uint64_t>(k));
      c.phase = phase;
      init.components.push_back(std::move(c));
    }
    auto [model, rep] = gradient ? train_gradient(init, csv.samples, config)
                                 : train_ml(init, csv.samples, config);
    report = std::move(rep);
    model_json = model_to_json(model);
    if (!args.density_path.empty() && nv <= 2) {
      double lo = 0.0;
      double hi = 0.0;
      Index points = 0;
      parse_grid(args.grid, &lo, &hi, &points);
      save_text(args.density_path, density_grid_csv(model, lo, hi, points));
    }
  }

  save_text(args.out_path, model_json);
  if (!args.report_path.empty()) save_text(args.report_path, report_to_json(report));

  emit(json{{"command", "fit-density"},
            {"samples", csv.samples.cols()},
            {"dropped_rows", csv.dropped},
            {"final_cost", report.final_cost},
            {"iterations", report.iterations},
            {"model", args.out_path}});
  return 0;
}

// -------------------------------------------------------------------- fit-tnn

struct FitTnnArgs {
  CommonFlags flags;
  std::string arch;
  std::string loss = "mse";
  int phase = 1;
  std::string out_path;
  std::string report_path;
  std::string pred_path;
};

std::string predictions_csv(const TnnNetwork& net, const Matrix& inputs,
                            const Matrix& targets) {
  const Matrix pred = network_forward_batch(net, inputs);
  std::string out;
  for (Index i = 0; i < inputs.rows(); ++i)
    out += "x" + std::to_string(i + 1) + ",";
  for (Index i = 0; i < targets.rows(); ++i)
    out += "y" + std::to_string(i + 1) + ",";
  for (Index i = 0; i < pred.rows(); ++i)
    out += "p" + std::to_string(i + 1) + (i + 1 < pred.rows() ? "," : "");
  out += '\n';
  for (Index c = 0; c < inputs.cols(); ++c) {
    for (Index i = 0; i < inputs.rows(); ++i) out += sig17(inputs(i, c)) + ",";
    for (Index i = 0; i < targets.rows(); ++i) out += sig17(targets(i, c)) + ",";
    for (Index i = 0; i < pred.rows(); ++i)
      out += sig17(pred(i, c)) + (i + 1 < pred.rows() ? "," : "");
    out += '\n';
  }
  return out;
}

int run_fit_tnn(const FitTnnArgs& args) {
  const Phase phase = args.phase == 1 ? Phase::I : Phase::II;
  const Loss loss = args.loss == "mse" ? Loss::Mse : Loss::CrossEntropy;
  TnnNetwork net = parse_architecture(args.arch, phase, loss);

  const CsvData csv = ingest_csv(args.flags.data_path, clip_value(args.flags.clip));
  const Index in = net.in_dim();
  const Index out = net.out_dim();
  if (csv.samples.rows() != in + out)
    fail(ErrorCode::ShapeMismatch,
         "data rows carry " + std::to_string(csv.samples.rows()) +
             " fields, architecture needs " + std::to_string(in) + "+" +
             std::to_string(out));
  const Matrix inputs = csv.samples.topRows(in);
  const Matrix targets = csv.samples.bottomRows(out);

  const TrainConfig config = to_config(args.flags);
  init_network(net, config.init_scale, config.seed);
  const auto [fit, report] = network_train(net, inputs, targets, config);

  save_text(args.out_path, model_to_json(fit));
  if (!args.report_path.empty()) save_text(args.report_path, report_to_json(report));
  if (!args.pred_path.empty())
    save_text(args.pred_path, predictions_csv(fit, inputs, targets));

  emit(json{{"command", "fit-tnn"},
            {"samples", csv.samples.cols()},
            {"parameters", param_count(fit)},
            {"final_cost", report.final_cost},
            {"iterations", report.iterations},
            {"model", args.out_path}});
  return 0;
}

// ------------------------------------------------------------------- classify

struct ClassifyArgs {
  CommonFlags flags;
  std::string patch_widths;
  Index nh = 2;
  int phase = 1;
  std::string out_path;
};

std::vector<int> read_labels(const Matrix& samples) {
  std::vector<int> labels(static_cast<std::size_t>(samples.cols()));
  const Index r = samples.rows() - 1;
  for (Index c = 0; c < samples.cols(); ++c) {
    const double x = samples(r, c);
    if (x != 0.0 && x != 1.0)
      fail(ErrorCode::InvalidArgument,
           "labels (last CSV column) must be 0 or 1, got " + sig17(x));
    labels[static_cast<std::size_t>(c)] = static_cast<int>(x);
  }
  return labels;
}

std::vector<Index> parse_widths(const std::string& text) {
  std::vector<Index> widths;
  std::istringstream stream(text);
  std::string f;
  while (std::getline(stream, f, ',')) {
    try {
      const long w = std::stol(f);
      if (w < 1) throw std::invalid_argument(f);
      widths.push_back(static_cast<Index>(w));
    } catch (const std::exception&) {
      fail(ErrorCode::InvalidArgument, "--patch-widths: bad width '" + f + "'");
    }
  }
  if (widths.empty()) fail(ErrorCode::InvalidArgument, "--patch-widths is empty");
  return widths;
}

int run_classify(const ClassifyArgs& args) {
  const CsvData csv = ingest_csv(args.flags.data_path, clip_value(args.flags.clip));
  if (csv.samples.rows() < 2)
    fail(ErrorCode::ShapeMismatch, "need feature columns plus a label column");
  const Matrix features = csv.samples.topRows(csv.samples.rows() - 1);
  const std::vector<int> labels = read_labels(csv.samples);

  const std::vector<Index> widths = parse_widths(args.patch_widths);
  Index total = 0;
  for (Index w : widths) total += w;
  if (total != features.rows())
    fail(ErrorCode::ShapeMismatch, "patch widths sum to " + std::to_string(total) +
                                       ", data has " +
                                       std::to_string(features.rows()) +
                                       " feature columns");

  std::vector<Matrix> patches;
  Index offset = 0;
  for (Index w : widths) {
    patches.push_back(features.middleRows(offset, w));
    offset += w;
  }

  if (args.phase != 1 && args.phase != 2)
    fail(ErrorCode::InvalidArgument, "--phase must be 1 or 2");
  const FeaturePipeline pipeline =
      feature_classifier_fit(patches, labels, args.nh, to_config(args.flags),
                             args.phase == 1 ? Phase::I : Phase::II);
  save_text(args.out_path, model_to_json(pipeline));

  Index correct = 0;
  for (Index c = 0; c < features.cols(); ++c) {
    const double p = pipeline_predict(pipeline, features.col(c));
    correct += (p >= 0.5) == (labels[static_cast<std::size_t>(c)] == 1) ? 1 : 0;
  }
  emit(json{{"command", "classify"},
            {"samples", features.cols()},
            {"train_accuracy",
             static_cast<double>(correct) / static_cast<double>(features.cols())},
            {"model", args.out_path}});
  return 0;
}

// ----------------------------------------------------------------------- eval

struct EvalArgs {
  std::string model_path;
  std::string data_path;
  double clip = 0.0;
  std::string pred_path;
};

int run_eval(const EvalArgs& args) {
  const std::string text = load_text(args.model_path);
  const CsvData csv = ingest_csv(args.data_path, clip_value(args.clip));
  const ModelKind kind = peek_model_kind(text);

  if (kind == ModelKind::Rtbm || kind == ModelKind::Mixture) {
    double nll = 0.0;
    if (kind == ModelKind::Rtbm) {
      const RtbmParams model = rtbm_from_json(text);
      nll = RtbmEvaluator(model).mean_nll(csv.samples);
    } else {
      const MixtureModel model = mixture_from_json(text);
      nll = MixtureEvaluator(model).mean_nll(csv.samples);
    }
    emit(json{{"command", "eval"},
              {"kind", kind == ModelKind::Rtbm ? "rtbm" : "mixture"},
              {"samples", csv.samples.cols()},
              {"nll", nll}});
    return 0;
  }

  if (kind == ModelKind::Tnn) {
    const TnnNetwork net = tnn_from_json(text);
    const Index in = net.in_dim();
    const Index out = net.out_dim();
    if (csv.samples.rows() != in + out)
      fail(ErrorCode::ShapeMismatch,
           "data rows carry " + std::to_string(csv.samples.rows()) +
               " fields, network needs " + std::to_string(in) + "+" +
               std::to_string(out));
    const Matrix inputs = csv.samples.topRows(in);
    const Matrix targets = csv.samples.bottomRows(out);
    const double loss = network_loss(net, inputs, targets);
    json result{{"command", "eval"},
                {"kind", "tnn"},
                {"samples", csv.samples.cols()},
                {"loss", loss}};
    if (net.loss == Loss::Mse) {
      result["rmse"] = std::sqrt(loss / static_cast<double>(out));
    } else {
      const Matrix pred = network_forward_batch(net, inputs);
      Index correct = 0;
      for (Index c = 0; c < pred.cols(); ++c) {
        Index pi;
        Index ti;
        pred.col(c).maxCoeff(&pi);
        targets.col(c).maxCoeff(&ti);
        correct += pi == ti ? 1 : 0;
      }
      result["accuracy"] =
          static_cast<double>(correct) / static_cast<double>(pred.cols());
    }
    if (!args.pred_path.empty())
      save_text(args.pred_path, predictions_csv(net, inputs, targets));
    emit(result);
    return 0;
  }

  const FeaturePipeline pipeline = pipeline_from_json(text);
  if (csv.samples.rows() != pipeline.input_dim() + 1)
    fail(ErrorCode::ShapeMismatch,
         "data rows carry " + std::to_string(csv.samples.rows()) +
             " fields, pipeline needs " + std::to_string(pipeline.input_dim()) +
             " features plus a label");
  const Matrix features = csv.samples.topRows(pipeline.input_dim());
  const std::vector<int> labels = read_labels(csv.samples);
  Index correct = 0;
  std::string pred_csv = "p\n";
  for (Index c = 0; c < features.cols(); ++c) {
    const double p = pipeline_predict(pipeline, features.col(c));
    correct += (p >= 0.5) == (labels[static_cast<std::size_t>(c)] == 1) ? 1 : 0;
    pred_csv += sig17(p) + "\n";
  }
  if (!args.pred_path.empty()) save_text(args.pred_path, pred_csv);
  emit(json{{"command", "eval"},
            {"kind", "pipeline"},
            {"samples", features.cols()},
            {"accuracy",
             static_cast<double>(correct) / static_cast<double>(features.cols())}});
  return 0;
}

// ---------------------------------------------------------------------- theta

struct ThetaArgs {
  std::string omega;
  std::string z;
  int phase = 1;
};

int run_theta(const ThetaArgs& args) {
  const Matrix omega = parse_matrix_arg(args.omega, "--omega");
  const Matrix zmat = parse_matrix_arg(args.z, "--z");
  if (zmat.rows() != 1 && zmat.cols() != 1)
    fail(ErrorCode::InvalidArgument, "--z must be a vector");
  const Vector z = zmat.rows() == 1 ? Vector(zmat.transpose().col(0)) : Vector(zmat.col(0));

  const theta::ThetaBasis basis(omega);
  const theta::ThetaResult r = args.phase == 1
                                   ? basis.eval_real(z, theta::DerivativeSpec::none())
                                   : basis.eval_imag(z, theta::DerivativeSpec::none());
  const Complex full = r.value * std::exp(r.log_scale);
  emit(json{{"command", "theta"},
            {"phase", args.phase},
            {"log_scale", r.log_scale},
            {"mantissa_re", r.value.real()},
            {"mantissa_im", r.value.imag()},
            {"value_re", full.real()},
            {"value_im", full.imag()}});
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Riemann-theta Boltzmann machine toolkit"};
  app.require_subcommand(1);

  FitDensityArgs fd;
  CLI::App* fit_density = app.add_subcommand("fit-density", "Fit a density model");
  fit_density->add_option("--data", fd.flags.data_path, "Training CSV")->required();
  fit_density->add_option("--out", fd.out_path, "Model JSON path")->required();
  fit_density->add_option("--report", fd.report_path, "Training report JSON path");
  fit_density->add_option("--density-out", fd.density_path, "Density curve CSV path");
  fit_density->add_option("--grid", fd.grid, "Density grid lo:hi:points");
  fit_density->add_option("--nv", fd.nv, "Expected visible dimension (checked)");
  fit_density->add_option("--nh", fd.nh, "Hidden units");
  fit_density->add_option("--mixture", fd.mixture, "Mixture components");
  fit_density->add_option("--phase", fd.phase, "Model phase")
      ->check(CLI::IsMember({1, 2}));
  fd.flags.clip = 20.0;
  fit_density->add_option("--clip", fd.flags.clip,
                          "Drop rows with any |x| >= clip (<= 0 disables)");
  add_train_flags(fit_density, &fd.flags);

  FitTnnArgs ft;
  CLI::App* fit_tnn = app.add_subcommand("fit-tnn", "Fit a theta network");
  fit_tnn->add_option("--data", ft.flags.data_path, "CSV with input then target columns")
      ->required();
  fit_tnn->add_option("--arch", ft.arch, "Architecture, e.g. 1:3-3-2:1")->required();
  fit_tnn->add_option("--out", ft.out_path, "Model JSON path")->required();
  fit_tnn->add_option("--report", ft.report_path, "Training report JSON path");
  fit_tnn->add_option("--pred-out", ft.pred_path, "Predictions CSV path");
  fit_tnn->add_option("--loss", ft.loss, "mse or ce")
      ->check(CLI::IsMember({"mse", "ce"}));
  fit_tnn->add_option("--phase", ft.phase, "Theta layer phase")
      ->check(CLI::IsMember({1, 2}));
  fit_tnn->add_option("--clip", ft.flags.clip,
                      "Drop rows with any |x| >= clip (<= 0 disables)");
  add_train_flags(fit_tnn, &ft.flags);

  ClassifyArgs cl;
  CLI::App* classify = app.add_subcommand("classify", "Fit the patch-feature pipeline");
  classify->add_option("--data", cl.flags.data_path,
                       "CSV with feature columns then a 0/1 label column")
      ->required();
  classify->add_option("--patch-widths", cl.patch_widths, "Comma-separated widths")
      ->required();
  classify->add_option("--out", cl.out_path, "Pipeline JSON path")->required();
  classify->add_option("--nh", cl.nh, "Hidden units per patch model");
  classify->add_option("--phase", cl.phase, "Patch model phase");
  classify->add_option("--clip", cl.flags.clip,
                       "Drop rows with any |x| >= clip (<= 0 disables)");
  add_train_flags(classify, &cl.flags);

  EvalArgs ev;
  CLI::App* eval_cmd = app.add_subcommand("eval", "Evaluate a saved model on data");
  eval_cmd->add_option("--model", ev.model_path, "Model JSON path")->required();
  eval_cmd->add_option("--data", ev.data_path, "Evaluation CSV")->required();
  eval_cmd->add_option("--pred-out", ev.pred_path, "Predictions CSV path");
  eval_cmd->add_option("--clip", ev.clip,
                       "Drop rows with any |x| >= clip (<= 0 disables)");

  ThetaArgs th;
  CLI::App* theta_cmd = app.add_subcommand("theta", "Evaluate theta~ directly");
  theta_cmd->add_option("--omega", th.omega, "Matrix rows 'a,b;c,d'")->required();
  theta_cmd->add_option("--z", th.z, "Argument vector 'x,y'")->required();
  theta_cmd->add_option("--phase", th.phase, "1: real z, 2: z = i y")
      ->check(CLI::IsMember({1, 2}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (fit_density->parsed()) return run_fit_density(fd);
    if (fit_tnn->parsed()) return run_fit_tnn(ft);
    if (classify->parsed()) return run_classify(cl);
    if (eval_cmd->parsed()) return run_eval(ev);
    if (theta_cmd->parsed()) return run_theta(th);
  } catch (const Error& e) {
    std::cerr << json{{"error", error_code_name(e.code())}, {"message", e.what()}}
                     .dump()
              << "\n";
    return exit_class(e.code());
  } catch (const std::exception& e) {
    std::cerr << json{{"error", "Unexpected"}, {"message", e.what()}}.dump() << "\n";
    return 4;
  }
  return 2;
}
