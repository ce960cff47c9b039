#include "geoadapt/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "geoadapt/binio.hpp"
#include "geoadapt/errors.hpp"

namespace geoadapt::net {

namespace {

constexpr char kMagic[8] = {'G', 'A', 'D', 'P', 'C', 'K', 'P', 'T'};
constexpr int kFormatVersion = 1;

Mlp<float> make_zero_mlp(const std::vector<int>& widths) {
  Mlp<float> mlp;
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    Linear<float> layer;
    layer.weight = Matrix<float>::Zero(widths[l + 1], widths[l]);
    layer.bias = Vector<float>::Zero(widths[l + 1]);
    mlp.layers.push_back(std::move(layer));
  }
  return mlp;
}

ModelState<float> make_zero_model(const NetConfig& cfg) {
  cfg.validate();
  ModelState<float> s;
  s.config = cfg;
  const int d = cfg.feature_dim();
  s.encoder = make_zero_mlp(cfg.encoder_widths);
  s.head_cls = make_zero_mlp({d, cfg.head_hidden, cfg.num_classes});
  s.head_rot = make_zero_mlp({d, cfg.head_hidden, cfg.num_rotation_classes});
  s.head_loc = make_zero_mlp({d, cfg.head_hidden, cfg.num_location_classes});
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path,
                     const ModelState<float>& model,
                     const nlohmann::json& meta) {
  nlohmann::json header;
  header["format"] = "geoadapt-checkpoint";
  header["format_version"] = kFormatVersion;
  header["scalar"] = "f32";
  header["layout"] = "col_major";
  header["config"] = {
      {"encoder_widths", model.config.encoder_widths},
      {"head_hidden", model.config.head_hidden},
      {"num_classes", model.config.num_classes},
      {"num_rotation_classes", model.config.num_rotation_classes},
      {"num_location_classes", model.config.num_location_classes}};
  nlohmann::json tensors = nlohmann::json::array();
  for_each_tensor(model, [&](const std::string& name, const float*,
                             Eigen::Index rows, Eigen::Index cols) {
    tensors.push_back({{"name", name}, {"rows", rows}, {"cols", cols}});
  });
  header["tensors"] = std::move(tensors);
  header["meta"] = meta;

  const std::string header_text = header.dump();

  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("cannot open " + path.string() + " for write");
  os.write(kMagic, sizeof(kMagic));
  binio::write_u64_le(os, header_text.size());
  os.write(header_text.data(),
           static_cast<std::streamsize>(header_text.size()));
  for_each_tensor(model, [&](const std::string&, const float* data,
                             Eigen::Index rows, Eigen::Index cols) {
    for (Eigen::Index i = 0; i < rows * cols; ++i) {
      binio::write_f32_le(os, data[i]);
    }
  });
  if (!os) throw CheckpointError("write failed for " + path.string());
}

ModelState<float> load_checkpoint(const std::filesystem::path& path,
                                  nlohmann::json* meta_out) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("cannot open " + path.string());

  char magic[8];
  if (!binio::read_exact(is, magic, sizeof(magic)) ||
      std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw CheckpointError(path.string() + ": not a checkpoint file");
  }
  std::uint64_t header_len = 0;
  if (!binio::read_u64_le(is, header_len)) {
    throw CheckpointError(path.string() + ": truncated header length");
  }
  std::string header_text(header_len, '\0');
  if (!binio::read_exact(is, header_text.data(), header_len)) {
    throw CheckpointError(path.string() + ": truncated header");
  }

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_text);
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": bad header json: " + e.what());
  }

  try {
    if (header.at("format") != "geoadapt-checkpoint" ||
        header.at("format_version") != kFormatVersion ||
        header.at("scalar") != "f32") {
      throw CheckpointError(path.string() + ": unsupported checkpoint format");
    }
    NetConfig cfg;
    const auto& jc = header.at("config");
    cfg.encoder_widths = jc.at("encoder_widths").get<std::vector<int>>();
    cfg.head_hidden = jc.at("head_hidden").get<int>();
    cfg.num_classes = jc.at("num_classes").get<int>();
    cfg.num_rotation_classes = jc.at("num_rotation_classes").get<int>();
    cfg.num_location_classes = jc.at("num_location_classes").get<int>();

    ModelState<float> model = make_zero_model(cfg);

    // the header's shape table must agree with the config-derived shapes
    const auto& tensors = header.at("tensors");
    std::size_t t = 0;
    for_each_tensor(model, [&](const std::string& name, float*,
                               Eigen::Index rows, Eigen::Index cols) {
      if (t >= tensors.size()) {
        throw CheckpointError(path.string() + ": tensor table too short");
      }
      const auto& row = tensors.at(t);
      if (row.at("name") != name ||
          row.at("rows").get<Eigen::Index>() != rows ||
          row.at("cols").get<Eigen::Index>() != cols) {
        throw CheckpointError(path.string() + ": shape mismatch at tensor '" +
                              name + "'");
      }
      ++t;
    });
    if (t != tensors.size()) {
      throw CheckpointError(path.string() + ": tensor table too long");
    }

    bool short_blob = false;
    for_each_tensor(model, [&](const std::string&, float* data,
                               Eigen::Index rows, Eigen::Index cols) {
      for (Eigen::Index i = 0; i < rows * cols && !short_blob; ++i) {
        if (!binio::read_f32_le(is, data[i])) short_blob = true;
      }
    });
    if (short_blob) {
      throw CheckpointError(path.string() + ": truncated parameter blob");
    }
    char extra;
    if (is.read(&extra, 1).gcount() != 0) {
      throw CheckpointError(path.string() + ": trailing bytes after blob");
    }

    if (meta_out) *meta_out = header.value("meta", nlohmann::json::object());
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(path.string() + ": bad header json: " + e.what());
  }
}

}  // namespace geoadapt::net
