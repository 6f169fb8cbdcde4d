#include "rtbm/io.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

namespace rtbm {
namespace {

using nlohmann::json;

std::string trim(const std::string& s) {
  const auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return "";
  const auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

// Full-consumption numeric parse; returns false on non-numeric text (which
// is how the optional header row is recognized). strtod rather than stod:
// stod throws on denormals, which are legitimate field values.
bool parse_field(const std::string& field, double* out) {
  if (field.empty()) return false;
  char* end = nullptr;
  *out = std::strtod(field.c_str(), &end);
  return end == field.c_str() + field.size();
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  fields.push_back(trim(cur));
  return fields;
}

[[noreturn]] void fail_cell(ErrorCode code, const std::string& what, int row,
                            std::size_t col) {
  fail(code, what + " at row " + std::to_string(row) + ", column " +
                 std::to_string(col));
}

json matrix_to_json(const Matrix& m) {
  json rows = json::array();
  for (Index i = 0; i < m.rows(); ++i) {
    json row = json::array();
    for (Index j = 0; j < m.cols(); ++j) row.push_back(m(i, j));
    rows.push_back(std::move(row));
  }
  return rows;
}

json vector_to_json(const Vector& v) {
  json arr = json::array();
  for (Index i = 0; i < v.size(); ++i) arr.push_back(v(i));
  return arr;
}

Matrix matrix_from_json(const json& j, const std::string& name) {
  if (!j.is_array() || j.empty())
    fail(ErrorCode::ParseError, "'" + name + "' must be a non-empty array of rows");
  const std::size_t rows = j.size();
  if (!j[0].is_array() || j[0].empty())
    fail(ErrorCode::ParseError, "'" + name + "' rows must be non-empty arrays");
  const std::size_t cols = j[0].size();
  Matrix m(static_cast<Index>(rows), static_cast<Index>(cols));
  for (std::size_t i = 0; i < rows; ++i) {
    if (!j[i].is_array() || j[i].size() != cols)
      fail(ErrorCode::ParseError, "'" + name + "' rows have uneven lengths");
    for (std::size_t k = 0; k < cols; ++k) {
      if (!j[i][k].is_number())
        fail(ErrorCode::ParseError, "'" + name + "' entries must be numbers");
      m(static_cast<Index>(i), static_cast<Index>(k)) = j[i][k].get<double>();
    }
  }
  return m;
}

Vector vector_from_json(const json& j, const std::string& name) {
  if (!j.is_array())
    fail(ErrorCode::ParseError, "'" + name + "' must be an array");
  Vector v(static_cast<Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number())
      fail(ErrorCode::ParseError, "'" + name + "' entries must be numbers");
    v(static_cast<Index>(i)) = j[i].get<double>();
  }
  return v;
}

const json& field(const json& j, const std::string& name) {
  const auto it = j.find(name);
  if (it == j.end()) fail(ErrorCode::ParseError, "missing field '" + name + "'");
  return *it;
}

json parse_json(const std::string& text) {
  json j = json::parse(text, nullptr, false);
  if (j.is_discarded()) fail(ErrorCode::ParseError, "malformed JSON");
  if (!j.is_object()) fail(ErrorCode::ParseError, "expected a JSON object");
  return j;
}

int phase_to_int(Phase phase) { return phase == Phase::I ? 1 : 2; }

Phase phase_from_json(const json& j) {
  if (!j.is_number_integer() || (j.get<int>() != 1 && j.get<int>() != 2))
    fail(ErrorCode::ParseError, "'phase' must be 1 or 2");
  return j.get<int>() == 1 ? Phase::I : Phase::II;
}

json rtbm_to_json_obj(const RtbmParams& params) {
  json j;
  j["kind"] = "rtbm";
  j["phase"] = phase_to_int(params.phase);
  j["t"] = matrix_to_json(params.t);
  j["q"] = matrix_to_json(params.q);
  j["w"] = matrix_to_json(params.w);
  j["bv"] = vector_to_json(params.b_v);
  j["bh"] = vector_to_json(params.b_h);
  return j;
}

RtbmParams rtbm_from_json_obj(const json& j) {
  RtbmParams params;
  params.phase = phase_from_json(field(j, "phase"));
  params.t = matrix_from_json(field(j, "t"), "t");
  params.q = matrix_from_json(field(j, "q"), "q");
  params.w = matrix_from_json(field(j, "w"), "w");
  params.b_v = vector_from_json(field(j, "bv"), "bv");
  params.b_h = vector_from_json(field(j, "bh"), "bh");
  validate(params);
  return params;
}

const std::string& kind_of(const json& j) {
  const json& k = field(j, "kind");
  if (!k.is_string()) fail(ErrorCode::ParseError, "'kind' must be a string");
  return k.get_ref<const std::string&>();
}

void expect_kind(const json& j, const std::string& want) {
  if (kind_of(j) != want)
    fail(ErrorCode::ParseError, "expected kind '" + want + "', got '" + kind_of(j) + "'");
}

json tnn_to_json_obj(const TnnNetwork& net) {
  json j;
  j["kind"] = "tnn";
  j["loss"] = net.loss == Loss::Mse ? "mse" : "cross-entropy";
  json layers = json::array();
  for (const Layer& layer : net.layers) {
    json l;
    if (std::holds_alternative<ThetaLayer>(layer)) {
      const ThetaLayer& t = std::get<ThetaLayer>(layer);
      l["type"] = "theta";
      l["phase"] = phase_to_int(t.phase);
      l["diagonal_q"] = t.diagonal_q;
      l["w"] = matrix_to_json(t.w);
      l["bh"] = vector_to_json(t.b_h);
      l["q"] = matrix_to_json(t.q);
    } else {
      const AffineLayer& a = std::get<AffineLayer>(layer);
      l["type"] = "affine";
      l["activation"] = a.activation == Activation::Linear   ? "linear"
                        : a.activation == Activation::Tanh ? "tanh"
                                                           : "sigmoid";
      l["w"] = matrix_to_json(a.w);
      l["b"] = vector_to_json(a.b);
    }
    layers.push_back(std::move(l));
  }
  j["layers"] = std::move(layers);
  return j;
}

TnnNetwork tnn_from_json_obj(const json& j) {
  TnnNetwork net;
  const json& loss = field(j, "loss");
  if (loss == "mse") {
    net.loss = Loss::Mse;
  } else if (loss == "cross-entropy") {
    net.loss = Loss::CrossEntropy;
  } else {
    fail(ErrorCode::ParseError, "'loss' must be 'mse' or 'cross-entropy'");
  }
  const json& layers = field(j, "layers");
  if (!layers.is_array() || layers.empty())
    fail(ErrorCode::ParseError, "'layers' must be a non-empty array");
  for (const json& l : layers) {
    const json& type = field(l, "type");
    if (type == "theta") {
      ThetaLayer t;
      t.phase = phase_from_json(field(l, "phase"));
      const json& diag = field(l, "diagonal_q");
      if (!diag.is_boolean())
        fail(ErrorCode::ParseError, "'diagonal_q' must be a boolean");
      t.diagonal_q = diag.get<bool>();
      t.w = matrix_from_json(field(l, "w"), "w");
      t.b_h = vector_from_json(field(l, "bh"), "bh");
      t.q = matrix_from_json(field(l, "q"), "q");
      net.layers.emplace_back(std::move(t));
    } else if (type == "affine") {
      AffineLayer a;
      const json& act = field(l, "activation");
      if (act == "linear") {
        a.activation = Activation::Linear;
      } else if (act == "tanh") {
        a.activation = Activation::Tanh;
      } else if (act == "sigmoid") {
        a.activation = Activation::Sigmoid;
      } else {
        fail(ErrorCode::ParseError,
             "'activation' must be 'linear', 'tanh' or 'sigmoid'");
      }
      a.w = matrix_from_json(field(l, "w"), "w");
      a.b = vector_from_json(field(l, "b"), "b");
      net.layers.emplace_back(std::move(a));
    } else {
      fail(ErrorCode::ParseError, "layer 'type' must be 'theta' or 'affine'");
    }
  }
  validate(net);
  return net;
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

void append_sig17(std::string* out, double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  *out += buf;
}

std::string density_csv_impl(Index n_v,
                             const std::function<double(const Vector&)>& density,
                             double lo, double hi, Index points) {
  if (points < 2) fail(ErrorCode::InvalidArgument, "grid needs at least 2 points");
  if (!(lo < hi)) fail(ErrorCode::InvalidArgument, "grid bounds must increase");
  if (n_v > 2) fail(ErrorCode::UnsupportedDim, "density export covers 1 or 2 dims");

  const double step = (hi - lo) / static_cast<double>(points - 1);
  std::string out;
  if (n_v == 1) {
    out = "v,p\n";
    Vector v(1);
    for (Index i = 0; i < points; ++i) {
      v(0) = lo + step * static_cast<double>(i);
      append_sig17(&out, v(0));
      out += ',';
      append_sig17(&out, density(v));
      out += '\n';
    }
    return out;
  }
  out = "v1,v2,p\n";
  Vector v(2);
  for (Index i = 0; i < points; ++i) {
    v(0) = lo + step * static_cast<double>(i);
    for (Index j = 0; j < points; ++j) {
      v(1) = lo + step * static_cast<double>(j);
      append_sig17(&out, v(0));
      out += ',';
      append_sig17(&out, v(1));
      out += ',';
      append_sig17(&out, density(v));
      out += '\n';
    }
  }
  return out;
}

}  // namespace

CsvData ingest_csv(const std::string& path, double clip) {
  std::ifstream in(path);
  if (!in.is_open()) fail(ErrorCode::FileNotFound, "cannot open '" + path + "'");

  CsvData data;
  std::vector<Vector> rows;
  Index dim = 0;
  std::string line;
  int line_no = 0;
  bool first_content = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::vector<std::string> fields = split_csv_line(line);

    if (first_content) {
      // Optional header: skip the first row when any field is non-numeric.
      first_content = false;
      bool numeric = true;
      double unused;
      for (const std::string& f : fields)
        if (!parse_field(f, &unused)) {
          numeric = false;
          break;
        }
      if (!numeric) continue;
    }

    if (dim == 0) {
      dim = static_cast<Index>(fields.size());
    } else if (static_cast<Index>(fields.size()) != dim) {
      fail_cell(ErrorCode::ParseError,
                "expected " + std::to_string(dim) + " fields, got " +
                    std::to_string(fields.size()),
                line_no, fields.size());
    }

    Vector v(dim);
    for (std::size_t c = 0; c < fields.size(); ++c) {
      double x;
      if (!parse_field(fields[c], &x))
        fail_cell(ErrorCode::ParseError, "non-numeric field '" + fields[c] + "'",
                  line_no, c + 1);
      if (!std::isfinite(x))
        fail_cell(ErrorCode::ParseError, "non-finite value", line_no, c + 1);
      v(static_cast<Index>(c)) = x;
    }
    if (v.cwiseAbs().maxCoeff() >= clip) {
      ++data.dropped;
      continue;
    }
    rows.push_back(std::move(v));
  }

  if (rows.empty())
    fail(ErrorCode::EmptyData, data.dropped > 0
                                   ? "every row exceeded the clip bound"
                                   : "no data rows in '" + path + "'");
  data.samples.resize(dim, static_cast<Index>(rows.size()));
  for (std::size_t c = 0; c < rows.size(); ++c)
    data.samples.col(static_cast<Index>(c)) = rows[c];
  return data;
}

std::string load_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in.is_open()) fail(ErrorCode::FileNotFound, "cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void save_text(const std::string& path, const std::string& content) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out.is_open()) fail(ErrorCode::IoError, "cannot write '" + tmp + "'");
    out << content;
    out.flush();
    if (!out.good()) fail(ErrorCode::IoError, "write failed for '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    std::remove(tmp.c_str());
    fail(ErrorCode::IoError, "cannot rename '" + tmp + "' to '" + path + "'");
  }
}

std::string model_to_json(const RtbmParams& params) {
  return dump(rtbm_to_json_obj(params));
}

std::string model_to_json(const MixtureModel& model) {
  json j;
  j["kind"] = "mixture";
  j["omegas"] = vector_to_json(model.omegas);
  json comps = json::array();
  for (const RtbmParams& c : model.components) comps.push_back(rtbm_to_json_obj(c));
  j["components"] = std::move(comps);
  return dump(j);
}

std::string model_to_json(const TnnNetwork& net) { return dump(tnn_to_json_obj(net)); }

std::string model_to_json(const FeaturePipeline& pipeline) {
  json j;
  j["kind"] = "pipeline";
  json patches = json::array();
  for (const auto& [offset, width] : pipeline.patches)
    patches.push_back(json::array({offset, width}));
  j["patches"] = std::move(patches);
  json models = json::array();
  for (const RtbmParams& m : pipeline.models) models.push_back(rtbm_to_json_obj(m));
  j["models"] = std::move(models);
  j["classifier"] = {{"w", vector_to_json(pipeline.classifier.w)},
                     {"b", pipeline.classifier.b}};
  return dump(j);
}

std::string report_to_json(const TrainReport& report) {
  json j;
  j["final_cost"] = report.final_cost;
  j["iterations"] = report.iterations;
  j["rejected_candidates"] = report.rejected_candidates;
  json hist = json::array();
  for (double h : report.history) hist.push_back(h);
  j["history"] = std::move(hist);
  return dump(j);
}

ModelKind peek_model_kind(const std::string& text) {
  const json j = parse_json(text);
  const std::string& kind = kind_of(j);
  if (kind == "rtbm") return ModelKind::Rtbm;
  if (kind == "mixture") return ModelKind::Mixture;
  if (kind == "tnn") return ModelKind::Tnn;
  if (kind == "pipeline") return ModelKind::Pipeline;
  fail(ErrorCode::ParseError, "unknown model kind '" + kind + "'");
}

RtbmParams rtbm_from_json(const std::string& text) {
  const json j = parse_json(text);
  expect_kind(j, "rtbm");
  return rtbm_from_json_obj(j);
}

MixtureModel mixture_from_json(const std::string& text) {
  const json j = parse_json(text);
  expect_kind(j, "mixture");
  MixtureModel model;
  model.omegas = vector_from_json(field(j, "omegas"), "omegas");
  const json& comps = field(j, "components");
  if (!comps.is_array() || comps.empty())
    fail(ErrorCode::ParseError, "'components' must be a non-empty array");
  for (const json& c : comps) model.components.push_back(rtbm_from_json_obj(c));
  validate(model);
  return model;
}

TnnNetwork tnn_from_json(const std::string& text) {
  const json j = parse_json(text);
  expect_kind(j, "tnn");
  return tnn_from_json_obj(j);
}

FeaturePipeline pipeline_from_json(const std::string& text) {
  const json j = parse_json(text);
  expect_kind(j, "pipeline");
  FeaturePipeline pipeline;
  const json& patches = field(j, "patches");
  if (!patches.is_array() || patches.empty())
    fail(ErrorCode::ParseError, "'patches' must be a non-empty array");
  for (const json& p : patches) {
    if (!p.is_array() || p.size() != 2 || !p[0].is_number_integer() ||
        !p[1].is_number_integer())
      fail(ErrorCode::ParseError, "each patch must be an [offset, width] pair");
    pipeline.patches.emplace_back(p[0].get<Index>(), p[1].get<Index>());
  }
  const json& models = field(j, "models");
  if (!models.is_array() || models.size() != patches.size())
    fail(ErrorCode::ParseError, "'models' must align with 'patches'");
  for (const json& m : models) pipeline.models.push_back(rtbm_from_json_obj(m));

  const json& cls = field(j, "classifier");
  pipeline.classifier.w = vector_from_json(field(cls, "w"), "classifier.w");
  const json& bias = field(cls, "b");
  if (!bias.is_number()) fail(ErrorCode::ParseError, "'classifier.b' must be a number");
  pipeline.classifier.b = bias.get<double>();

  // Structural invariants the JSON cannot express.
  Index offset = 0;
  for (std::size_t p = 0; p < pipeline.patches.size(); ++p) {
    const auto [off, width] = pipeline.patches[p];
    if (off != offset || width < 1)
      fail(ErrorCode::ParseError, "patches must tile the input consecutively");
    if (pipeline.models[p].n_v() != width)
      fail(ErrorCode::ParseError, "patch width does not match its model");
    offset += width;
  }
  if (pipeline.classifier.w.size() != pipeline.feature_dim())
    fail(ErrorCode::ParseError, "classifier length does not match the features");
  return pipeline;
}

std::string density_grid_csv(const RtbmParams& params, double lo, double hi,
                             Index points) {
  const RtbmEvaluator ev(params);
  return density_csv_impl(
      params.n_v(), [&](const Vector& v) { return ev.density(v).p; }, lo, hi, points);
}

std::string density_grid_csv(const MixtureModel& model, double lo, double hi,
                             Index points) {
  const MixtureEvaluator ev(model);
  return density_csv_impl(
      model.n_v(), [&](const Vector& v) { return ev.density(v).p; }, lo, hi, points);
}

}  // namespace rtbm
