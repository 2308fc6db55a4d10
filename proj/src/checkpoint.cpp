#include "wal/model.hpp"

#include <nlohmann/json.hpp>

#include <fstream>

namespace wal {

namespace {

constexpr const char* kCheckpointFormat = "wal-checkpoint";
constexpr int kCheckpointVersion = 1;

nlohmann::json matrix_to_json(const Mat& m) {
  nlohmann::json data = nlohmann::json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) data.push_back(m(i, j));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", std::move(data)}};
}

Mat matrix_from_json(const nlohmann::json& j, const std::string& name) {
  if (!j.is_object() || !j.contains("rows") || !j.contains("cols") || !j.contains("data"))
    throw ValidationError("checkpoint tensor '" + name + "' is malformed");
  const auto rows = j["rows"].get<Eigen::Index>();
  const auto cols = j["cols"].get<Eigen::Index>();
  const auto& data = j["data"];
  if (rows < 0 || cols < 0 || !data.is_array() || static_cast<Eigen::Index>(data.size()) != rows * cols)
    throw ValidationError("checkpoint tensor '" + name + "' has inconsistent shape");
  Mat m(rows, cols);
  std::size_t k = 0;
  for (Eigen::Index i = 0; i < rows; ++i)
    for (Eigen::Index c = 0; c < cols; ++c) m(i, c) = data[k++].get<double>();
  return m;
}

Vec vector_from_json(const nlohmann::json& j, const std::string& name) {
  Mat m = matrix_from_json(j, name);
  if (m.cols() != 1 && m.size() != 0) throw ValidationError("checkpoint tensor '" + name + "' must be a column");
  return m.size() == 0 ? Vec() : Vec(m.col(0));
}

}  // namespace

void save_checkpoint(const ModelParams& p, const std::filesystem::path& path) {
  nlohmann::json t;
  t["language.weight"] = matrix_to_json(p.language.weight);
  t["language.bias"] = matrix_to_json(p.language.bias);
  t["vision.weight"] = matrix_to_json(p.vision.weight);
  t["vision.bias"] = matrix_to_json(p.vision.bias);
  t["attention.bilinear"] = matrix_to_json(p.attention.bilinear);
  t["attention.proj_sentence"] = matrix_to_json(p.attention.proj_sentence);
  t["attention.proj_frame"] = matrix_to_json(p.attention.proj_frame);
  t["attention.score"] = matrix_to_json(p.attention.score);
  t["disc.bvf"] = matrix_to_json(p.disc.bvf);
  t["disc.coef"] = matrix_to_json(p.disc.coef);
  nlohmann::json doc = {{"format", kCheckpointFormat},
                        {"version", kCheckpointVersion},
                        {"attention_kind", to_string(p.attention.kind)},
                        {"input_mode", to_string(p.disc.input_mode)},
                        {"disc.bias", p.disc.bias},
                        {"lvc.scale", p.lvc_scale},
                        {"lvc.bias", p.lvc_bias},
                        {"tensors", std::move(t)}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ValidationError("cannot write checkpoint " + path.string());
  out << doc.dump(1) << '\n';
  if (!out) throw ValidationError("failed writing checkpoint " + path.string());
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot read checkpoint " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("checkpoint " + path.string() + " is not valid JSON: " + e.what());
  }
  if (doc.value("format", "") != kCheckpointFormat) throw ValidationError(path.string() + " is not a checkpoint");
  if (doc.value("version", -1) != kCheckpointVersion) throw ValidationError("unsupported checkpoint version");
  try {
    ModelParams p;
    const auto& t = doc.at("tensors");
    auto mat = [&](const char* name) { return matrix_from_json(t.at(name), name); };
    auto vec = [&](const char* name) { return vector_from_json(t.at(name), name); };
    p.language.weight = mat("language.weight");
    p.language.bias = vec("language.bias");
    p.vision.weight = mat("vision.weight");
    p.vision.bias = vec("vision.bias");
    p.attention.kind = parse_attention_kind(doc.at("attention_kind").get<std::string>());
    p.attention.bilinear = mat("attention.bilinear");
    p.attention.proj_sentence = mat("attention.proj_sentence");
    p.attention.proj_frame = mat("attention.proj_frame");
    p.attention.score = vec("attention.score");
    p.disc.input_mode = parse_input_mode(doc.at("input_mode").get<std::string>());
    p.disc.bvf = mat("disc.bvf");
    p.disc.coef = vec("disc.coef");
    p.disc.bias = doc.at("disc.bias").get<double>();
    p.lvc_scale = doc.at("lvc.scale").get<double>();
    p.lvc_bias = doc.at("lvc.bias").get<double>();

    const auto d_emb = p.language.weight.rows();
    if (p.vision.weight.rows() != d_emb || p.language.bias.size() != d_emb || p.vision.bias.size() != d_emb ||
        p.language.weight.cols() != p.vision.weight.cols() || p.disc.bvf.cols() != d_emb || p.disc.bvf.rows() < 1)
      throw ValidationError("checkpoint tensor shapes are inconsistent");
    const auto want_coef = p.disc.input_mode == InputMode::concat ? 2 : 1;
    if (p.disc.coef.size() != want_coef) throw ValidationError("checkpoint disc.coef has the wrong size");
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("checkpoint " + path.string() + " is malformed: " + e.what());
  }
}

}  // namespace wal
