#include "peg/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs assume a little-endian host");

namespace peg {

namespace {

void append_params(std::string& out, const EmbedderParams& p) {
  std::vector<double> flat = flatten(p);
  for (double x : flat) {
    float f = static_cast<float>(x);
    char buf[4];
    std::memcpy(buf, &f, 4);
    out.append(buf, 4);
  }
}

void read_params(EmbedderParams& p, const char* data, size_t count) {
  std::vector<double> flat(count);
  for (size_t i = 0; i < count; ++i) {
    float f;
    std::memcpy(&f, data + 4 * i, 4);
    flat[i] = static_cast<double>(f);
  }
  unflatten(p, flat);
}

}  // namespace

void save_model_checkpoint(const Embedder& m, const std::string& path) {
  nlohmann::json header{{"arch", m.arch},
                        {"classes", m.head_classes()},
                        {"hyper",
                         {{"eps", m.hyper.eps},
                          {"w_id", m.hyper.w_id},
                          {"w_tri", m.hyper.w_tri},
                          {"w_mid", m.hyper.w_mid},
                          {"w_mtri", m.hyper.w_mtri},
                          {"lr", m.hyper.lr}}},
                        {"lineage", m.lineage},
                        {"model_id", m.model_id},
                        {"timestep", m.opt.t},
                        {"rng_stream", m.rng_stream}};
  std::string out = "PEGCKPT v1\n" + header.dump() + "\n";
  append_params(out, m.params);
  append_params(out, m.ema_params);
  append_params(out, m.opt.m);
  append_params(out, m.opt.v);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

Embedder load_model_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open: " + path);
  std::string content((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  size_t eol1 = content.find('\n');
  if (eol1 == std::string::npos || content.substr(0, eol1) != "PEGCKPT v1")
    throw ParseError(path + ": bad checkpoint magic");
  size_t eol2 = content.find('\n', eol1 + 1);
  if (eol2 == std::string::npos) throw ParseError(path + ": missing checkpoint header");

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(content.substr(eol1 + 1, eol2 - eol1 - 1));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": bad checkpoint header: " + e.what());
  }

  Embedder m;
  try {
    m.arch = header.at("arch").get<std::vector<int>>();
    int classes = header.at("classes").get<int>();
    const auto& h = header.at("hyper");
    m.hyper.eps = h.at("eps").get<double>();
    m.hyper.w_id = h.at("w_id").get<double>();
    m.hyper.w_tri = h.at("w_tri").get<double>();
    m.hyper.w_mid = h.at("w_mid").get<double>();
    m.hyper.w_mtri = h.at("w_mtri").get<double>();
    m.hyper.lr = h.at("lr").get<double>();
    m.lineage = header.at("lineage").get<int>();
    m.model_id = header.at("model_id").get<int>();
    m.opt.t = header.at("timestep").get<long>();
    m.rng_stream = header.at("rng_stream").get<uint64_t>();

    if (m.arch.size() < 2) throw ParseError(path + ": arch too short");
    for (size_t i = 1; i < m.arch.size(); ++i) {
      Layer l;
      l.W = Eigen::MatrixXd::Zero(m.arch[i], m.arch[i - 1]);
      l.b = Eigen::VectorXd::Zero(m.arch[i]);
      m.params.layers.push_back(std::move(l));
    }
    m.params.classifier = Eigen::MatrixXd::Zero(classes, m.arch.back());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(path + ": bad checkpoint header: " + e.what());
  }
  m.ema_params = m.params;
  m.opt.m = m.params;
  m.opt.v = m.params;

  const size_t count = static_cast<size_t>(param_count(m.params));
  const size_t blob = eol2 + 1;
  if (content.size() - blob != 4 * count * 4)
    throw ParseError(path + ": blob size " + std::to_string(content.size() - blob) +
                     " does not match expected " + std::to_string(4 * count * 4));
  const char* data = content.data() + blob;
  read_params(m.params, data, count);
  read_params(m.ema_params, data + 4 * count, count);
  read_params(m.opt.m, data + 8 * count, count);
  read_params(m.opt.v, data + 12 * count, count);
  return m;
}

}  // namespace peg
