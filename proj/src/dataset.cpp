#include "peg/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace peg {

char split_tag(Split s) {
  switch (s) {
    case Split::Train: return 'T';
    case Split::Query: return 'Q';
    case Split::Gallery: return 'G';
  }
  return '?';
}

Split split_from_tag(char c) {
  switch (c) {
    case 'T': return Split::Train;
    case 'Q': return Split::Query;
    case 'G': return Split::Gallery;
  }
  throw ParseError(std::string("unknown split tag '") + c + "'");
}

void FeatureDataset::validate() const {
  const int N = n();
  if (N < 1 || dim() < 1) throw ConfigError("dataset must have N >= 1 and D >= 1");
  if (static_cast<int>(ids.size()) != N || static_cast<int>(cameras.size()) != N ||
      static_cast<int>(split.size()) != N)
    throw ConfigError("ids/cameras/split length must equal N");
  std::set<int> query_ids, gallery_ids;
  for (int i = 0; i < N; ++i) {
    if (split[i] == Split::Query) query_ids.insert(ids[i]);
    if (split[i] == Split::Gallery) gallery_ids.insert(ids[i]);
  }
  for (int id : query_ids)
    if (!gallery_ids.count(id))
      throw ConfigError("identity " + std::to_string(id) + " is in query but not in gallery");
}

void SynthSpec::validate() const {
  if (num_identities < 2) throw ConfigError("num_identities must be >= 2");
  if (samples_per_identity < 2) throw ConfigError("samples_per_identity must be >= 2");
  if (dim < 1) throw ConfigError("dim must be >= 1");
  if (intra_std < 0) throw ConfigError("intra_std must be >= 0");
  if (camera_count < 1) throw ConfigError("camera_count must be >= 1");
  if (camera_shift < 0) throw ConfigError("camera_shift must be >= 0");
}

FeatureDataset generate_synthetic(const SynthSpec& spec) {
  spec.validate();
  Rng rng(spec.seed);
  const int N = spec.num_identities * spec.samples_per_identity;
  const int D = spec.dim;

  Eigen::MatrixXd centers(spec.num_identities, D);
  for (int i = 0; i < spec.num_identities; ++i)
    for (int d = 0; d < D; ++d) centers(i, d) = normal01(rng);

  Eigen::MatrixXd shifts(spec.camera_count, D);
  for (int c = 0; c < spec.camera_count; ++c)
    for (int d = 0; d < D; ++d) shifts(c, d) = spec.camera_shift * normal01(rng);

  FeatureDataset ds;
  ds.features.resize(N, D);
  ds.ids.resize(N);
  ds.cameras.resize(N);
  ds.split.assign(N, Split::Train);
  for (int i = 0; i < spec.num_identities; ++i) {
    for (int s = 0; s < spec.samples_per_identity; ++s) {
      const int g = i * spec.samples_per_identity + s;
      const int cam = g % spec.camera_count;
      ds.ids[g] = i;
      ds.cameras[g] = cam;
      for (int d = 0; d < D; ++d)
        ds.features(g, d) = centers(i, d) + spec.intra_std * normal01(rng) + shifts(cam, d);
    }
  }
  quantize_f32(ds.features);
  return ds;
}

std::vector<int> corrupt_labels(const std::vector<int>& ids, double fraction, int num_ids,
                                uint64_t seed) {
  if (fraction < 0 || fraction > 1) throw ConfigError("fraction must be in [0,1]");
  std::vector<int> out = ids;
  const int N = static_cast<int>(ids.size());
  const int k = static_cast<int>(std::llround(fraction * N));
  if (k == 0) return out;
  if (num_ids < 2) throw ConfigError("num_ids must be >= 2 to pick a different label");
  Rng rng(seed);
  std::vector<int> order = sample_without_replacement(rng, N, k);
  for (int idx : order) {
    // draw from the other num_ids-1 labels by skipping the original
    int draw = uniform_int(rng, 0, num_ids - 2);
    out[idx] = draw >= ids[idx] ? draw + 1 : draw;
  }
  return out;
}

FeatureDataset split_query_gallery(const FeatureDataset& ds, double query_fraction,
                                   uint64_t seed) {
  if (query_fraction < 0 || query_fraction > 1) throw ConfigError("query_fraction must be in [0,1]");
  std::map<int, std::vector<int>> by_id;
  for (int i = 0; i < ds.n(); ++i) by_id[ds.ids[i]].push_back(i);
  for (const auto& [id, members] : by_id)
    if (members.size() < 2)
      throw ConfigError("identity " + std::to_string(id) + " has a single sample; cannot split");

  FeatureDataset out = ds;
  Rng rng(seed);
  for (const auto& [id, members] : by_id) {
    // reserve one gallery sample per camera so any query keeps a cross-camera match
    std::set<int> cams_seen;
    std::vector<int> reserved, free_pool;
    for (int idx : members) {
      if (cams_seen.insert(ds.cameras[idx]).second)
        reserved.push_back(idx);
      else
        free_pool.push_back(idx);
    }
    int q = static_cast<int>(std::llround(query_fraction * members.size()));
    if (cams_seen.size() < 2) q = 0;  // no cross-camera match possible
    q = std::min<int>(q, static_cast<int>(free_pool.size()));
    std::shuffle(free_pool.begin(), free_pool.end(), rng);
    for (int idx : members) out.split[idx] = Split::Gallery;
    for (int i = 0; i < q; ++i) out.split[free_pool[i]] = Split::Query;
  }
  out.validate();
  return out;
}

namespace {

std::string format_f32(double x) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", static_cast<double>(static_cast<float>(x)));
  return buf;
}

void write_le32(std::string& out, uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

uint32_t read_le32(const unsigned char* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

}  // namespace

void save_dataset(const FeatureDataset& ds, const std::string& path, bool binary) {
  ds.validate();
  std::string out;
  out += "PEGDS v1 " + std::to_string(ds.n()) + " " + std::to_string(ds.dim()) + "\n";
  if (!binary) {
    for (int i = 0; i < ds.n(); ++i) {
      out += std::to_string(ds.ids[i]);
      out += ',';
      out += std::to_string(ds.cameras[i]);
      out += ',';
      out += split_tag(ds.split[i]);
      for (int d = 0; d < ds.dim(); ++d) {
        out += ',';
        out += format_f32(ds.features(i, d));
      }
      out += '\n';
    }
  } else {
    for (int i = 0; i < ds.n(); ++i) {
      write_le32(out, static_cast<uint32_t>(ds.ids[i]));
      write_le32(out, static_cast<uint32_t>(ds.cameras[i]));
      out.push_back(static_cast<char>(static_cast<uint8_t>(ds.split[i])));
      for (int d = 0; d < ds.dim(); ++d) {
        float f = static_cast<float>(ds.features(i, d));
        uint32_t bits;
        std::memcpy(&bits, &f, 4);
        write_le32(out, bits);
      }
    }
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

FeatureDataset load_dataset(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ParseError("cannot open: " + path);
  std::string content((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (content.empty()) throw ParseError(path + ": missing header");

  size_t eol = content.find('\n');
  if (eol == std::string::npos) throw ParseError(path + ": missing header");
  std::istringstream head(content.substr(0, eol));
  std::string magic, version;
  long long N = 0, D = 0;
  head >> magic >> version >> N >> D;
  if (magic != "PEGDS" || version != "v1" || head.fail())
    throw ParseError(path + ": bad header '" + content.substr(0, eol) + "'");
  if (N < 1 || D < 1) throw ParseError(path + ": header N and D must be positive");

  FeatureDataset ds;
  ds.features.resize(N, D);
  ds.ids.resize(N);
  ds.cameras.resize(N);
  ds.split.resize(N);

  const size_t body = eol + 1;
  const size_t rec = 4 + 4 + 1 + 4 * static_cast<size_t>(D);
  if (content.size() - body == rec * static_cast<size_t>(N)) {
    const unsigned char* p = reinterpret_cast<const unsigned char*>(content.data()) + body;
    for (long long i = 0; i < N; ++i) {
      ds.ids[i] = static_cast<int32_t>(read_le32(p));
      p += 4;
      ds.cameras[i] = static_cast<int32_t>(read_le32(p));
      p += 4;
      uint8_t tag = *p++;
      if (tag > 2)
        throw ParseError(path + ": unknown split tag at byte offset " +
                         std::to_string(body + i * rec + 8));
      ds.split[i] = static_cast<Split>(tag);
      for (long long d = 0; d < D; ++d) {
        uint32_t bits = read_le32(p);
        p += 4;
        float fv;
        std::memcpy(&fv, &bits, 4);
        ds.features(i, d) = static_cast<double>(fv);
      }
    }
  } else {
    std::istringstream in(content.substr(body));
    std::string line;
    for (long long i = 0; i < N; ++i) {
      if (!std::getline(in, line))
        throw ParseError(path + ": truncated at line " + std::to_string(i + 2));
      std::vector<std::string> fields;
      size_t start = 0;
      while (true) {
        size_t pos = line.find(',', start);
        fields.push_back(line.substr(start, pos == std::string::npos ? pos : pos - start));
        if (pos == std::string::npos) break;
        start = pos + 1;
      }
      if (static_cast<long long>(fields.size()) != 3 + D)
        throw ParseError(path + ": line " + std::to_string(i + 2) + " has " +
                         std::to_string(fields.size()) + " fields, expected " +
                         std::to_string(3 + D));
      try {
        ds.ids[i] = std::stoi(fields[0]);
        ds.cameras[i] = std::stoi(fields[1]);
      } catch (const std::exception&) {
        throw ParseError(path + ": line " + std::to_string(i + 2) + " has a bad integer field");
      }
      if (fields[2].size() != 1)
        throw ParseError(path + ": line " + std::to_string(i + 2) + " has a bad split tag");
      ds.split[i] = split_from_tag(fields[2][0]);
      for (long long d = 0; d < D; ++d) {
        const std::string& s = fields[3 + d];
        char* end = nullptr;
        float fv = std::strtof(s.c_str(), &end);
        if (end == s.c_str() || *end != '\0')
          throw ParseError(path + ": line " + std::to_string(i + 2) + " has a bad feature value '" +
                           s + "'");
        ds.features(i, d) = static_cast<double>(fv);
      }
    }
  }
  try {
    ds.validate();
  } catch (const ConfigError& e) {
    throw ParseError(path + ": " + e.what());
  }
  return ds;
}

}  // namespace peg
