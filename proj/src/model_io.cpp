#include "dmhe/model_io.hpp"

#include "dmhe/errors.hpp"
#include "yaml_util.hpp"

namespace dmhe {

namespace {

std::string at(const std::string& base, size_t j) { return base + "[" + std::to_string(j) + "]"; }

PartitionedLinearModel from_node(const YAML::Node& root) {
  const YAML::Node part = yaml::child(root, "partition", "model");
  const auto sd =
      yaml::to_int_list(yaml::child(part, "state_dims", "partition"), "partition.state_dims");
  const auto od =
      yaml::to_int_list(yaml::child(part, "output_dims", "partition"), "partition.output_dims");
  const size_t n = sd.size();
  if (n == 0 || od.size() != n) {
    throw ConfigError(
        "partition: state_dims and output_dims must be non-empty "
        "and of equal length");
  }
  for (size_t i = 0; i < n; ++i) {
    if (sd[i] < 1 || od[i] < 1) {
      throw ConfigError(at("partition.state_dims", i) + ": must be positive");
    }
  }
  BlockGrid A(n, std::vector<Eigen::MatrixXd>(n));
  const YAML::Node a = yaml::child(root, "A", "model");
  if (!a.IsSequence()) throw ConfigError("A: expected a list of blocks");
  for (size_t b = 0; b < a.size(); ++b) {
    const std::string w = at("A", b);
    const int r = yaml::to_int(yaml::child(a[b], "row", w), w + ".row");
    const int c = yaml::to_int(yaml::child(a[b], "col", w), w + ".col");
    if (r < 0 || c < 0 || r >= static_cast<int>(n) || c >= static_cast<int>(n)) {
      throw ConfigError(w + ": block index out of range");
    }
    Eigen::MatrixXd m = yaml::to_matrix(yaml::child(a[b], "data", w), w + ".data");
    if (m.rows() != sd[r] || m.cols() != sd[c]) {
      throw ConfigError(w + ".data: expected " + std::to_string(sd[r]) + "x" +
                        std::to_string(sd[c]) + " matrix");
    }
    A[r][c] = m;
  }
  for (size_t i = 0; i < n; ++i) {
    for (size_t l = 0; l < n; ++l) {
      if (A[i][l].size() == 0) A[i][l] = Eigen::MatrixXd::Zero(sd[i], sd[l]);
    }
  }
  auto list = [&](const char* key) {
    YAML::Node node = yaml::child(root, key, "model");
    if (!node.IsSequence() || node.size() != n) {
      throw ConfigError(std::string(key) + ": expected one entry per subsystem");
    }
    return node;
  };
  std::vector<Eigen::MatrixXd> C, Q, R, P0;
  const YAML::Node cn = list("C"), qn = list("Q"), rn = list("R"), pn = list("P0");
  for (size_t i = 0; i < n; ++i) {
    Eigen::MatrixXd ci = yaml::to_matrix(cn[i], at("C", i));
    if (ci.rows() != od[i] || ci.cols() != sd[i]) {
      throw ConfigError(at("C", i) + ": expected " + std::to_string(od[i]) + "x" +
                        std::to_string(sd[i]) + " matrix");
    }
    C.push_back(ci);
    Q.push_back(yaml::to_weight(qn[i], sd[i], at("Q", i)));
    R.push_back(yaml::to_weight(rn[i], od[i], at("R", i)));
    P0.push_back(yaml::to_weight(pn[i], sd[i], at("P0", i)));
  }
  try {
    return PartitionedLinearModel(A, C, Q, R, P0);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
}

}  // namespace

PartitionedLinearModel parse_linear_model(const std::string& yaml_text) {
  try {
    return from_node(YAML::Load(yaml_text));
  } catch (const YAML::Exception& e) {
    throw ConfigError(std::string("model: ") + e.what());
  }
}

PartitionedLinearModel load_linear_model(const std::string& path) {
  try {
    return from_node(yaml::load_file(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

std::string linear_model_to_yaml(const PartitionedLinearModel& model) {
  const Partition& p = model.partition();
  YAML::Emitter out;
  out.SetDoublePrecision(17);
  out << YAML::BeginMap;
  out << YAML::Key << "partition" << YAML::Value << YAML::BeginMap;
  out << YAML::Key << "state_dims" << YAML::Value << YAML::Flow << p.state_dims();
  out << YAML::Key << "output_dims" << YAML::Value << YAML::Flow << p.output_dims();
  out << YAML::EndMap;
  out << YAML::Key << "A" << YAML::Value << YAML::BeginSeq;
  for (int i = 0; i < p.n(); ++i) {
    for (int l = 0; l < p.n(); ++l) {
      if (i != l && model.A_block(i, l).cwiseAbs().maxCoeff() == 0.0) continue;
      out << YAML::BeginMap << YAML::Key << "row" << YAML::Value << i << YAML::Key << "col"
          << YAML::Value << l << YAML::Key << "data" << YAML::Value;
      yaml::emit_matrix(out, model.A_block(i, l));
      out << YAML::EndMap;
    }
  }
  out << YAML::EndSeq;
  auto emit_list = [&](const char* key, const std::vector<Eigen::MatrixXd>& v) {
    out << YAML::Key << key << YAML::Value << YAML::BeginSeq;
    for (const auto& m : v) yaml::emit_matrix(out, m);
    out << YAML::EndSeq;
  };
  emit_list("C", model.C_blocks());
  emit_list("Q", model.Q_blocks());
  emit_list("R", model.R_blocks());
  emit_list("P0", model.P0_blocks());
  out << YAML::EndMap;
  return std::string(out.c_str()) + "\n";
}

}  // namespace dmhe
