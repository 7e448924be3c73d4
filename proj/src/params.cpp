#include "langtraj/params.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs are written little-endian");

namespace langtraj {

Param& ParamStore::add(const std::string& name, int rows, int cols) {
  if (name.empty() || name.find(' ') != std::string::npos)
    throw InvalidInput("param name must be non-empty and free of spaces: '" + name + "'");
  if (rows <= 0 || cols <= 0) throw InvalidInput("param " + name + ": non-positive shape");
  if (index_.count(name)) throw InvalidInput("duplicate param: " + name);
  index_[name] = static_cast<int>(params_.size());
  Param p;
  p.name = name;
  p.rows = rows;
  p.cols = cols;
  p.value.assign(static_cast<std::size_t>(rows) * cols, 0.0);
  p.grad.assign(p.value.size(), 0.0);
  params_.push_back(std::move(p));
  return params_.back();
}

Param& ParamStore::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvalidInput("unknown param: " + name);
  return params_[it->second];
}

const Param& ParamStore::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw InvalidInput("unknown param: " + name);
  return params_[it->second];
}

bool ParamStore::has(const std::string& name) const { return index_.count(name) > 0; }

void ParamStore::zero_grad() {
  for (Param& p : params_) std::fill(p.grad.begin(), p.grad.end(), 0.0);
}

std::size_t ParamStore::total_size() const {
  std::size_t n = 0;
  for (const Param& p : params_) n += p.value.size();
  return n;
}

double ParamStore::grad_norm() const {
  double s = 0;
  for (const Param& p : params_)
    for (double g : p.grad) s += g * g;
  return std::sqrt(s);
}

void ParamStore::scale_grad(double k) {
  for (Param& p : params_)
    for (double& g : p.grad) g *= k;
}

void init_uniform(Param& p, Rng& rng, double bound) {
  for (double& v : p.value) v = (2.0 * rng.uniform() - 1.0) * bound;
}

void adam_step(ParamStore& store, const AdamConfig& cfg, int t) {
  if (t < 1) throw InvalidInput("adam step count must be positive");
  double bc1 = 1.0 - std::pow(cfg.beta1, t);
  double bc2 = 1.0 - std::pow(cfg.beta2, t);
  for (Param& p : store.params()) {
    if (p.m.empty()) {
      p.m.assign(p.value.size(), 0.0);
      p.v.assign(p.value.size(), 0.0);
    }
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      double g = p.grad[i];
      if (!std::isfinite(g))
        throw DivergenceError("non-finite gradient in " + p.name + "[" + std::to_string(i) + "]");
      p.m[i] = cfg.beta1 * p.m[i] + (1.0 - cfg.beta1) * g;
      p.v[i] = cfg.beta2 * p.v[i] + (1.0 - cfg.beta2) * g * g;
      double mhat = p.m[i] / bc1;
      double vhat = p.v[i] / bc2;
      p.value[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

double clip_grad_norm(ParamStore& store, double max_norm) {
  double norm = store.grad_norm();
  if (norm > max_norm && norm > 0) store.scale_grad(max_norm / norm);
  return norm;
}

// ---------------------------------------------------------------------------
// checkpoint files

namespace {

constexpr const char* kMagic = "langtraj-checkpoint v1";

void append_tensor_blob(std::string& blob, const std::vector<double>& v) {
  std::size_t off = blob.size();
  blob.resize(off + v.size() * sizeof(double));
  std::memcpy(blob.data() + off, v.data(), v.size() * sizeof(double));
}

}  // namespace

void save_checkpoint(const ParamStore& store, const std::string& path,
                     const std::string& config_line) {
  if (config_line.find('\n') != std::string::npos)
    throw InvalidInput("checkpoint config must be a single line");
  std::ostringstream header;
  header << kMagic << "\n";
  header << "config " << (config_line.empty() ? "-" : config_line) << "\n";
  std::string blob;
  std::size_t offset = 0;
  for (const Param& p : store.params()) {
    header << "tensor " << p.name << " " << p.rows << " " << p.cols << " " << offset << "\n";
    append_tensor_blob(blob, p.value);
    offset += p.value.size();
  }
  header << "data " << offset << "\n";

  std::string body = header.str() + blob;
  std::uint64_t sum = fnv1a64(body.data(), body.size());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write checkpoint: " + path);
  out << body << "\nchecksum " << hex64(sum) << "\n";
  if (!out) throw InvalidInput("write failed: " + path);
}

ParamStore load_checkpoint(const std::string& path, std::string* config_line) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open checkpoint: " + path);
  std::string raw((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  // peel off the trailing "\nchecksum <hex>\n" and verify the rest
  const std::string tag = "\nchecksum ";
  std::size_t cpos = raw.rfind(tag);
  if (cpos == std::string::npos) throw FormatError(path + ": missing checksum");
  std::string want = raw.substr(cpos + tag.size());
  while (!want.empty() && (want.back() == '\n' || want.back() == '\r')) want.pop_back();
  std::string body = raw.substr(0, cpos);
  if (hex64(fnv1a64(body.data(), body.size())) != want)
    throw FormatError(path + ": checksum mismatch, file is corrupt");

  std::istringstream hs(body);
  std::string line;
  if (!std::getline(hs, line) || line != kMagic)
    throw FormatError(path + ": not a checkpoint file");
  if (!std::getline(hs, line) || line.rfind("config ", 0) != 0)
    throw FormatError(path + ": missing config line");
  if (config_line != nullptr) {
    std::string c = line.substr(7);
    *config_line = (c == "-") ? "" : c;
  }

  ParamStore store;
  struct Entry {
    std::string name;
    int rows, cols;
    std::size_t offset;
  };
  std::vector<Entry> entries;
  std::size_t total = 0;
  bool saw_data = false;
  while (std::getline(hs, line)) {
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "tensor") {
      Entry e;
      ls >> e.name >> e.rows >> e.cols >> e.offset;
      if (!ls) throw FormatError(path + ": bad tensor line: " + line);
      entries.push_back(e);
    } else if (kind == "data") {
      ls >> total;
      saw_data = true;
      break;
    } else {
      throw FormatError(path + ": unexpected header line: " + line);
    }
  }
  if (!saw_data) throw FormatError(path + ": missing data line");

  if (total * sizeof(double) > body.size()) throw FormatError(path + ": truncated data blob");
  std::size_t blob_start = body.size() - total * sizeof(double);
  // sanity: the header we just parsed must end exactly where the blob starts
  std::size_t header_len = static_cast<std::size_t>(hs.tellg());
  if (header_len != blob_start)
    throw FormatError(path + ": header/data length mismatch");

  for (const Entry& e : entries) {
    Param& p = store.add(e.name, e.rows, e.cols);
    if (e.offset + p.value.size() > total) throw FormatError(path + ": tensor past end of data");
    std::memcpy(p.value.data(), body.data() + blob_start + e.offset * sizeof(double),
                p.value.size() * sizeof(double));
  }
  return store;
}

void save_opt_state(const ParamStore& store, int step, const std::string& path) {
  ParamStore shadow;
  Param& t = shadow.add("adam.t", 1, 1);
  t.value[0] = step;
  // each reference is consumed before the next add() can reallocate the store
  for (const Param& p : store.params()) {
    Param& m = shadow.add(p.name + ".m", p.rows, p.cols);
    if (!p.m.empty()) m.value = p.m;
    Param& v = shadow.add(p.name + ".v", p.rows, p.cols);
    if (!p.v.empty()) v.value = p.v;
  }
  save_checkpoint(shadow, path);
}

int load_opt_state(ParamStore& store, const std::string& path) {
  ParamStore shadow = load_checkpoint(path);
  int step = static_cast<int>(shadow.get("adam.t").value[0]);
  for (Param& p : store.params()) {
    p.m = shadow.get(p.name + ".m").value;
    p.v = shadow.get(p.name + ".v").value;
  }
  return step;
}

// ---------------------------------------------------------------------------

GradCheckResult grad_check(ParamStore& store, const std::function<double()>& loss_fn,
                           int max_coords, double h) {
  GradCheckResult res;
  for (Param& p : store.params()) {
    int n = p.size();
    int count = (max_coords <= 0 || max_coords >= n) ? n : max_coords;
    // stride so the sampled coordinates cover the tensor evenly
    for (int k = 0; k < count; ++k) {
      int i = static_cast<int>(static_cast<long long>(k) * n / count);
      double saved = p.value[i];
      p.value[i] = saved + h;
      double up = loss_fn();
      p.value[i] = saved - h;
      double dn = loss_fn();
      p.value[i] = saved;
      double fd = (up - dn) / (2.0 * h);
      double g = p.grad[i];
      double rel = std::abs(fd - g) / std::max({1.0, std::abs(fd), std::abs(g)});
      ++res.checked;
      if (rel > res.max_rel_err) {
        res.max_rel_err = rel;
        res.worst_param = p.name;
        res.worst_index = i;
      }
    }
  }
  return res;
}

}  // namespace langtraj
