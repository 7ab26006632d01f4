#include "misshift/io.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <mutex>
#include <sstream>

#include <json.hpp>

#include "misshift/errors.hpp"
#include "misshift/rng.hpp"

namespace misshift {

using nlohmann::json;

namespace {

void append_u16(std::string& out, std::uint16_t v) {
  for (int i = 0; i < 2; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  explicit Reader(const std::string& buf) : buf_(buf) {}

  std::uint16_t u16() { return static_cast<std::uint16_t>(uint_n(2)); }
  std::uint32_t u32() { return static_cast<std::uint32_t>(uint_n(4)); }
  std::uint64_t u64() { return uint_n(8); }

  std::string take(std::size_t n) {
    need(n);
    std::string out = buf_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  void take_doubles(double* out, std::size_t count) {
    need(count * sizeof(double));
    std::memcpy(out, buf_.data() + pos_, count * sizeof(double));
    pos_ += count * sizeof(double);
  }

 private:
  std::uint64_t uint_n(int bytes) {
    need(static_cast<std::size_t>(bytes));
    std::uint64_t v = 0;
    for (int i = 0; i < bytes; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(bytes);
    return v;
  }

  void need(std::size_t n) {
    if (pos_ + n > buf_.size()) throw IoError("container: truncated data");
  }

  const std::string& buf_;
  std::size_t pos_ = 0;
};

}  // namespace

void Container::put_matrix(const std::string& name, const Matrix& m) {
  Section s;
  s.kind = 0;
  s.matrix = m;
  sections_[name] = std::move(s);
}

void Container::put_bytes(const std::string& name, std::string bytes) {
  Section s;
  s.kind = 2;
  s.bytes = std::move(bytes);
  sections_[name] = std::move(s);
}

void Container::put_bitmask(const std::string& name, const Matrix& m) {
  Section s;
  s.kind = 1;
  s.rows = m.rows();
  s.cols = m.cols();
  s.bytes.resize(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) s.bytes[i] = m[i] != 0.0 ? '\1' : '\0';
  sections_[name] = std::move(s);
}

bool Container::has(const std::string& name) const { return sections_.count(name) > 0; }

const Matrix& Container::matrix(const std::string& name) const {
  auto it = sections_.find(name);
  if (it == sections_.end() || it->second.kind != 0) {
    throw IoError("container: no matrix section '" + name + "'");
  }
  return it->second.matrix;
}

Matrix Container::bitmask(const std::string& name) const {
  auto it = sections_.find(name);
  if (it == sections_.end() || it->second.kind != 1) {
    throw IoError("container: no bitmask section '" + name + "'");
  }
  Matrix m(it->second.rows, it->second.cols);
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = it->second.bytes[i] != '\0' ? 1.0 : 0.0;
  return m;
}

const std::string& Container::bytes(const std::string& name) const {
  auto it = sections_.find(name);
  if (it == sections_.end() || it->second.kind != 2) {
    throw IoError("container: no blob section '" + name + "'");
  }
  return it->second.bytes;
}

std::string Container::serialize() const {
  std::string out;
  out.append(kContainerMagic, 4);
  append_u32(out, kContainerVersion);
  append_u32(out, static_cast<std::uint32_t>(sections_.size()));
  for (const auto& [name, s] : sections_) {
    append_u16(out, static_cast<std::uint16_t>(name.size()));
    out.append(name);
    out.push_back(static_cast<char>(s.kind));
    if (s.kind == 0) {
      append_u64(out, s.matrix.rows());
      append_u64(out, s.matrix.cols());
      const std::size_t bytes = s.matrix.size() * sizeof(double);
      const std::size_t at = out.size();
      out.resize(at + bytes);
      std::memcpy(out.data() + at, s.matrix.data(), bytes);
    } else if (s.kind == 1) {
      append_u64(out, s.rows);
      append_u64(out, s.cols);
      out.append(s.bytes);
    } else {
      append_u64(out, s.bytes.size());
      out.append(s.bytes);
    }
  }
  return out;
}

Container Container::deserialize(const std::string& buffer) {
  Reader r(buffer);
  const std::string magic = r.take(4);
  if (std::memcmp(magic.data(), kContainerMagic, 4) != 0) {
    throw IoError("container: bad magic bytes");
  }
  const std::uint32_t version = r.u32();
  if (version != kContainerVersion) {
    throw IoError("container: unsupported format version " + std::to_string(version));
  }
  const std::uint32_t count = r.u32();
  Container c;
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint16_t name_len = r.u16();
    const std::string name = r.take(name_len);
    const auto kind = static_cast<std::uint8_t>(r.take(1)[0]);
    Section s;
    s.kind = kind;
    if (kind == 0) {
      const std::uint64_t rows = r.u64();
      const std::uint64_t cols = r.u64();
      s.matrix = Matrix(rows, cols);
      r.take_doubles(s.matrix.data(), s.matrix.size());
    } else if (kind == 1) {
      s.rows = r.u64();
      s.cols = r.u64();
      s.bytes = r.take(s.rows * s.cols);
    } else if (kind == 2) {
      const std::uint64_t size = r.u64();
      s.bytes = r.take(size);
    } else {
      throw IoError("container: unknown section kind");
    }
    c.sections_[name] = std::move(s);
  }
  return c;
}

void Container::write_file(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  const std::string buf = serialize();
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

Container Container::read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize(ss.str());
}

std::uint64_t Container::content_hash() const {
  const std::string buf = serialize();
  return fnv1a64_bytes(buf.data(), buf.size());
}

namespace {

json wave_terms_to_json(const std::vector<WaveTerm>& waves) {
  json arr = json::array();
  for (const WaveTerm& w : waves) arr.push_back({w.amplitude, w.offset});
  return arr;
}

std::vector<WaveTerm> wave_terms_from_json(const json& arr) {
  std::vector<WaveTerm> out;
  for (const auto& e : arr) out.push_back({e.at(0).get<double>(), e.at(1).get<double>()});
  return out;
}

json dataset_meta(const Dataset& ds) {
  json meta;
  meta["format_version"] = kContainerVersion;
  meta["kind"] = "dataset";
  meta["origin"] = ds.origin;
  meta["seed"] = ds.seed;
  meta["rows"] = ds.x.rows();
  meta["dim"] = ds.x.cols();
  if (ds.gaussian.has_value()) {
    meta["lambda"] = ds.gaussian->lambda;
    meta["jitter"] = ds.gaussian->jitter;
  }
  meta["beta0"] = ds.outcome.beta0;
  meta["curvature"] = ds.outcome.curvature;
  meta["waves"] = wave_terms_to_json(ds.outcome.waves);
  meta["noise_sd"] = ds.outcome.noise_sd;
  return meta;
}

void write_sidecar(const std::string& path, const json& meta) {
  std::ofstream out(path + ".meta.json");
  if (!out) throw IoError("cannot write sidecar for '" + path + "'");
  out << meta.dump(2) << "\n";
}

}  // namespace

void put_gaussian_params(Container& c, const GaussianParams& gp) {
  c.put_matrix("gaussian/mu", Matrix::column(gp.mu));
  c.put_matrix("gaussian/sigma", gp.sigma);
  c.put_matrix("gaussian/factor", gp.factor);
  json meta;
  meta["d"] = gp.d;
  meta["lambda"] = gp.lambda;
  meta["jitter"] = gp.jitter;
  c.put_bytes("gaussian/meta", meta.dump());
}

GaussianParams get_gaussian_params(const Container& c) {
  GaussianParams gp;
  const json meta = json::parse(c.bytes("gaussian/meta"));
  gp.d = meta.at("d").get<std::size_t>();
  gp.lambda = meta.at("lambda").get<double>();
  gp.jitter = meta.at("jitter").get<double>();
  const Matrix& mu = c.matrix("gaussian/mu");
  gp.mu.assign(mu.data(), mu.data() + mu.size());
  gp.sigma = c.matrix("gaussian/sigma");
  gp.factor = c.matrix("gaussian/factor");
  return gp;
}

void put_outcome_params(Container& c, const OutcomeParams& op) {
  c.put_matrix("outcome/beta", Matrix::column(op.beta));
  json meta;
  meta["beta0"] = op.beta0;
  meta["curvature"] = op.curvature;
  meta["waves"] = wave_terms_to_json(op.waves);
  meta["noise_sd"] = op.noise_sd;
  c.put_bytes("outcome/meta", meta.dump());
}

OutcomeParams get_outcome_params(const Container& c) {
  OutcomeParams op;
  const Matrix& beta = c.matrix("outcome/beta");
  op.beta.assign(beta.data(), beta.data() + beta.size());
  const json meta = json::parse(c.bytes("outcome/meta"));
  op.beta0 = meta.at("beta0").get<double>();
  op.curvature = meta.at("curvature").get<double>();
  op.waves = wave_terms_from_json(meta.at("waves"));
  op.noise_sd = meta.at("noise_sd").get<double>();
  return op;
}

void save_dataset(const Dataset& ds, const std::string& path) {
  Container c;
  c.put_matrix("x", ds.x);
  c.put_matrix("y", Matrix::column(ds.y));
  if (ds.gaussian.has_value()) put_gaussian_params(c, *ds.gaussian);
  put_outcome_params(c, ds.outcome);
  const json meta = dataset_meta(ds);
  c.put_bytes("meta", meta.dump());
  c.write_file(path);
  write_sidecar(path, meta);
}

Dataset load_dataset(const std::string& path) {
  const Container c = Container::read_file(path);
  Dataset ds;
  ds.x = c.matrix("x");
  const Matrix& y = c.matrix("y");
  ds.y.assign(y.data(), y.data() + y.size());
  if (c.has("gaussian/meta")) ds.gaussian = get_gaussian_params(c);
  ds.outcome = get_outcome_params(c);
  const json meta = json::parse(c.bytes("meta"));
  ds.seed = meta.at("seed").get<std::uint64_t>();
  ds.origin = meta.at("origin").get<std::string>();
  return ds;
}

std::string mechanism_to_json(const MechanismSpec& spec) {
  json j;
  j["kind"] = mechanism_kind_name(spec.kind);
  j["rate"] = spec.rate;
  switch (spec.kind) {
    case MechanismKind::kMcar:
      break;
    case MechanismKind::kMarLogistic: {
      const MarLogisticParams& mp = spec.mar_logistic;
      json m;
      m["mcar_cols"] = mp.mcar_cols;
      m["logistic_cols"] = mp.logistic_cols;
      json slopes = json::array();
      for (std::size_t l = 0; l < mp.slopes.rows(); ++l) {
        json row = json::array();
        for (std::size_t a = 0; a < mp.slopes.cols(); ++a) row.push_back(mp.slopes(l, a));
        slopes.push_back(std::move(row));
      }
      m["slopes"] = std::move(slopes);
      m["intercepts"] = mp.intercepts;
      m["scales"] = mp.scales;
      m["direction_norms"] = mp.direction_norms;
      m["j_means"] = mp.j_means;
      m["j_sds"] = mp.j_sds;
      j["mar_logistic"] = std::move(m);
      break;
    }
    case MechanismKind::kSelfMask: {
      const SelfMaskParams& sm = spec.selfmask;
      json m;
      m["tilt"] = sm.tilt;
      m["amplitude"] = sm.amplitude;
      m["mu_tilde"] = sm.mu_tilde;
      m["sigma_tilde"] = sm.sigma_tilde;
      j["selfmask"] = std::move(m);
      break;
    }
    case MechanismKind::kMarY: {
      json m;
      m["slopes"] = spec.mar_y.slopes;
      m["intercepts"] = spec.mar_y.intercepts;
      j["mar_y"] = std::move(m);
      break;
    }
  }
  return j.dump();
}

MechanismSpec mechanism_from_json(const std::string& json_text) {
  const json j = json::parse(json_text);
  MechanismSpec spec;
  spec.kind = mechanism_kind_from_name(j.at("kind").get<std::string>());
  spec.rate = j.at("rate").get<double>();
  switch (spec.kind) {
    case MechanismKind::kMcar:
      break;
    case MechanismKind::kMarLogistic: {
      const json& m = j.at("mar_logistic");
      MarLogisticParams& mp = spec.mar_logistic;
      mp.mcar_cols = m.at("mcar_cols").get<std::vector<std::size_t>>();
      mp.logistic_cols = m.at("logistic_cols").get<std::vector<std::size_t>>();
      const json& slopes = m.at("slopes");
      const std::size_t rows = slopes.size();
      const std::size_t cols = rows > 0 ? slopes.at(0).size() : mp.mcar_cols.size();
      mp.slopes = Matrix(rows, cols);
      for (std::size_t l = 0; l < rows; ++l)
        for (std::size_t a = 0; a < cols; ++a) mp.slopes(l, a) = slopes.at(l).at(a).get<double>();
      mp.intercepts = m.at("intercepts").get<std::vector<double>>();
      mp.scales = m.at("scales").get<std::vector<double>>();
      mp.direction_norms = m.at("direction_norms").get<std::vector<double>>();
      mp.j_means = m.at("j_means").get<std::vector<double>>();
      mp.j_sds = m.at("j_sds").get<std::vector<double>>();
      break;
    }
    case MechanismKind::kSelfMask: {
      const json& m = j.at("selfmask");
      spec.selfmask.tilt = m.at("tilt").get<double>();
      spec.selfmask.amplitude = m.at("amplitude").get<std::vector<double>>();
      spec.selfmask.mu_tilde = m.at("mu_tilde").get<std::vector<double>>();
      spec.selfmask.sigma_tilde = m.at("sigma_tilde").get<std::vector<double>>();
      break;
    }
    case MechanismKind::kMarY: {
      const json& m = j.at("mar_y");
      spec.mar_y.slopes = m.at("slopes").get<std::vector<double>>();
      spec.mar_y.intercepts = m.at("intercepts").get<std::vector<double>>();
      break;
    }
  }
  return spec;
}

void save_masked_dataset(const MaskedDataset& md, const std::string& path) {
  Container c;
  c.put_matrix("xtilde", md.xtilde);
  c.put_bitmask("mask", md.mask);
  c.put_matrix("y", Matrix::column(md.y));
  if (md.gaussian.has_value()) put_gaussian_params(c, *md.gaussian);
  put_outcome_params(c, md.outcome);
  json meta;
  meta["format_version"] = kContainerVersion;
  meta["kind"] = "masked_dataset";
  meta["rows"] = md.rows();
  meta["dim"] = md.dim();
  if (md.mechanism.has_value()) {
    meta["mechanism"] = json::parse(mechanism_to_json(*md.mechanism));
  }
  c.put_bytes("meta", meta.dump());
  c.write_file(path);
  write_sidecar(path, meta);
}

MaskedDataset load_masked_dataset(const std::string& path) {
  const Container c = Container::read_file(path);
  MaskedDataset md;
  md.xtilde = c.matrix("xtilde");
  md.mask = c.bitmask("mask");
  const Matrix& y = c.matrix("y");
  md.y.assign(y.data(), y.data() + y.size());
  if (c.has("gaussian/meta")) md.gaussian = get_gaussian_params(c);
  md.outcome = get_outcome_params(c);
  const json meta = json::parse(c.bytes("meta"));
  if (meta.contains("mechanism")) {
    md.mechanism = mechanism_from_json(meta.at("mechanism").dump());
  }
  return md;
}

const char* kResultCsvHeader =
    "scenario,estimator,environment,rep,mse,bayes_mse,delta,seed,wall_ms,status";

std::string format_double(double v) {
  if (std::isnan(v)) return "";
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

namespace {

std::string sanitize_field(std::string s) {
  for (char& ch : s) {
    if (ch == ',' || ch == '\n' || ch == '\r') ch = ';';
  }
  return s;
}

std::mutex g_store_mutex;

}  // namespace

std::string ResultStore::format_row(const ResultRecord& r) {
  std::ostringstream ss;
  ss << sanitize_field(r.scenario) << ',' << sanitize_field(r.estimator) << ','
     << sanitize_field(r.environment) << ',' << r.rep << ',' << format_double(r.mse) << ',';
  if (r.bayes_mse.has_value()) ss << format_double(*r.bayes_mse);
  ss << ',';
  if (r.bayes_mse.has_value() && !std::isnan(r.mse)) ss << format_double(r.mse - *r.bayes_mse);
  ss << ',' << r.seed << ',' << format_double(r.wall_ms) << ',' << sanitize_field(r.status);
  return ss.str();
}

ResultStore::ResultStore(std::string path) : path_(std::move(path)) {
  std::lock_guard<std::mutex> lock(g_store_mutex);
  std::ifstream probe(path_);
  if (!probe.good()) {
    std::ofstream out(path_);
    if (!out) throw IoError("cannot create result store '" + path_ + "'");
    out << kResultCsvHeader << "\n";
  }
}

void ResultStore::append(const ResultRecord& record) {
  std::lock_guard<std::mutex> lock(g_store_mutex);
  std::ofstream out(path_, std::ios::app);
  if (!out) throw IoError("cannot append to result store '" + path_ + "'");
  out << format_row(record) << "\n";
  out.flush();
  if (!out) throw IoError("append failed for result store '" + path_ + "'");
}

std::vector<ResultRecord> ResultStore::read(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open result store '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw IoError("result store '" + path + "' is empty");
  std::vector<ResultRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::string cur;
    for (char ch : line) {
      if (ch == ',') {
        fields.push_back(cur);
        cur.clear();
      } else if (ch != '\r') {
        cur.push_back(ch);
      }
    }
    fields.push_back(cur);
    if (fields.size() != 10) throw IoError("result store: malformed row '" + line + "'");
    ResultRecord r;
    r.scenario = fields[0];
    r.estimator = fields[1];
    r.environment = fields[2];
    r.rep = std::stol(fields[3]);
    r.mse = fields[4].empty() ? std::nan("") : std::stod(fields[4]);
    if (!fields[5].empty()) r.bayes_mse = std::stod(fields[5]);
    r.seed = std::stoull(fields[7]);
    r.wall_ms = fields[8].empty() ? 0.0 : std::stod(fields[8]);
    r.status = fields[9];
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace misshift
