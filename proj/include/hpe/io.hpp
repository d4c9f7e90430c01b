#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "hpe/config.hpp"
#include "hpe/diff.hpp"
#include "hpe/error.hpp"
#include "hpe/field.hpp"
#include "hpe/hpe_model.hpp"
#include "hpe/pde.hpp"

namespace hpe::io {

namespace fs = std::filesystem;
using json = nlohmann::json;

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace detail {

inline std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError("cannot open '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void spit(const fs::path& p, const std::string& bytes) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot write '" + p.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw FormatError("short write to '" + p.string() + "'");
}

template <class T>
void put(std::string& s, T v) {
  char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  s.append(b, sizeof(T));
}

template <class T>
T take(const std::string& s, std::size_t& pos, const std::string& what) {
  if (pos + sizeof(T) > s.size()) throw FormatError(what + ": truncated file");
  T v;
  std::memcpy(&v, s.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace detail

inline json read_json(const fs::path& p) {
  try {
    return json::parse(detail::slurp(p));
  } catch (const json::parse_error& e) {
    throw FormatError("'" + p.string() + "': " + e.what());
  }
}

inline void write_json(const fs::path& p, const json& j) { detail::spit(p, j.dump(2) + "\n"); }

// ------------------------------------------------------------------- FLD1

enum class DType : std::uint8_t { Real = 0, Complex = 1 };

struct FieldFile {
  std::size_t nx = 0, ny = 0;
  DType dtype = DType::Real;
  std::vector<double> payload;  // complex values interleaved (re, im)
};

inline std::string encode_fld(std::size_t nx, std::size_t ny, DType dtype, const double* data, std::size_t n) {
  std::string s = "FLD1";
  detail::put(s, static_cast<std::uint32_t>(nx));
  detail::put(s, static_cast<std::uint32_t>(ny));
  detail::put(s, static_cast<std::uint8_t>(dtype));
  s.append(reinterpret_cast<const char*>(data), n * sizeof(double));
  return s;
}

inline FieldFile decode_fld(const std::string& s, const std::string& what = "FLD1") {
  if (s.size() < 4 || s.compare(0, 4, "FLD1") != 0) throw FormatError(what + ": bad magic (expected FLD1)");
  std::size_t pos = 4;
  FieldFile f;
  f.nx = detail::take<std::uint32_t>(s, pos, what);
  f.ny = detail::take<std::uint32_t>(s, pos, what);
  const auto dt = detail::take<std::uint8_t>(s, pos, what);
  if (dt > 1) throw FormatError(what + ": unknown dtype " + std::to_string(dt));
  f.dtype = static_cast<DType>(dt);
  const std::size_t n = f.nx * f.ny * (f.dtype == DType::Complex ? 2 : 1);
  if (s.size() - pos != n * sizeof(double)) throw FormatError(what + ": payload size does not match header");
  f.payload.resize(n);
  std::memcpy(f.payload.data(), s.data() + pos, n * sizeof(double));
  return f;
}

inline void write_fld(const fs::path& p, const RealField& f) {
  detail::spit(p, encode_fld(f.grid.nx, f.grid.ny, DType::Real, f.values.data(), f.size()));
}

inline void write_fld(const fs::path& p, const ComplexField& f) {
  detail::spit(p, encode_fld(f.grid.nx, f.grid.ny, DType::Complex, reinterpret_cast<const double*>(f.values.data()),
                             2 * f.size()));
}

inline FieldFile read_fld(const fs::path& p) { return decode_fld(detail::slurp(p), p.string()); }

inline RealField read_real_field(const fs::path& p, double dx = 1.0, double dy = 1.0) {
  auto f = read_fld(p);
  if (f.dtype != DType::Real) throw FormatError(p.string() + ": expected a real field");
  return RealField(GridSpec{f.nx, f.ny, dx, dy}, std::move(f.payload));
}

inline ComplexField read_complex_field(const fs::path& p, double dx = 1.0, double dy = 1.0) {
  const auto f = read_fld(p);
  if (f.dtype != DType::Complex) throw FormatError(p.string() + ": expected a complex field");
  ComplexField out(GridSpec{f.nx, f.ny, dx, dy});
  std::memcpy(out.values.data(), f.payload.data(), f.payload.size() * sizeof(double));
  return out;
}

inline fs::path sidecar_of(const fs::path& p) { return fs::path(p.string() + ".json"); }

template <class T>
void write_snapshot(const fs::path& p, const Field<T>& f, double time, SystemKind system) {
  write_fld(p, f);
  write_json(sidecar_of(p), {{"dx", f.grid.dx}, {"dy", f.grid.dy}, {"time", time}, {"system", to_string(system)}});
}

// ------------------------------------------------------------ trajectories

inline std::string snapshot_name(std::size_t k) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "snap_%05zu.fld", k);
  return buf;
}

/// Directory of FLD1 snapshots plus manifest.json; `extra` is merged into the manifest.
template <class T>
void write_trajectory(const fs::path& dir, const TrajectoryT<T>& tr, const json& extra = json::object()) {
  if (tr.size() == 0) throw ConfigError("write_trajectory: empty trajectory");
  fs::create_directories(dir);
  json files = json::array();
  for (std::size_t k = 0; k < tr.size(); ++k) {
    write_snapshot(dir / snapshot_name(k), tr.snapshots[k], tr.times[k], tr.system);
    files.push_back(snapshot_name(k));
  }
  json m = {{"system", to_string(tr.system)},
            {"params", config::to_json(tr.params)},
            {"grid", config::to_json(tr.snapshots.front().grid)},
            {"dtype", std::is_same_v<T, double> ? "real" : "complex"},
            {"seed", tr.seed},
            {"times", tr.times},
            {"files", files}};
  for (const auto& [k, v] : extra.items()) m[k] = v;
  write_json(dir / "manifest.json", m);
}

struct Manifest {
  json raw;
  SystemKind system = SystemKind::CH;
  GridSpec grid;
  bool complex = false;
  std::vector<double> times;
  std::vector<std::string> files;
};

inline Manifest read_manifest(const fs::path& dir) {
  Manifest m;
  m.raw = read_json(dir / "manifest.json");
  try {
    m.system = parse_system(m.raw.at("system").get<std::string>());
    config::read_into(m.raw.at("grid"), m.grid);
    m.complex = m.raw.at("dtype").get<std::string>() == "complex";
    m.times = m.raw.at("times").get<std::vector<double>>();
    m.files = m.raw.at("files").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw FormatError((dir / "manifest.json").string() + ": " + e.what());
  }
  if (m.times.size() != m.files.size()) throw FormatError("manifest: times and files differ in length");
  return m;
}

template <class T>
TrajectoryT<T> read_trajectory(const fs::path& dir) {
  const Manifest m = read_manifest(dir);
  if (m.complex != std::is_same_v<T, cplx>) throw FormatError(dir.string() + ": trajectory dtype mismatch");
  TrajectoryT<T> tr;
  tr.system = m.system;
  tr.times = m.times;
  tr.seed = m.raw.value("seed", std::uint64_t{0});
  if (m.raw.contains("params")) {
    config::Section s(m.raw["params"], "params");
    config::read_into(s, tr.params);
    s.finish();
  }
  for (const auto& f : m.files) {
    if constexpr (std::is_same_v<T, cplx>)
      tr.snapshots.push_back(read_complex_field(dir / f, m.grid.dx, m.grid.dy));
    else
      tr.snapshots.push_back(read_real_field(dir / f, m.grid.dx, m.grid.dy));
    if (!(tr.snapshots.back().grid == m.grid)) throw FormatError(f + ": grid differs from the manifest");
  }
  return tr;
}

/// The real observable of any stored trajectory (|u| for complex data).
inline Trajectory read_observable(const fs::path& dir) {
  if (read_manifest(dir).complex) return observable(read_trajectory<cplx>(dir));
  return read_trajectory<double>(dir);
}

// ------------------------------------------------------------------- HPEW

struct NamedTensor {
  std::string name;
  ad::Tensor tensor;
};

struct Checkpoint {
  json config;
  std::vector<NamedTensor> tensors;
};

inline std::string encode_checkpoint(const json& config, const std::vector<NamedTensor>& tensors) {
  json entries = json::array();
  std::size_t offset = 0;
  for (const auto& t : tensors) {
    entries.push_back({{"name", t.name},
                       {"shape", t.tensor.shape},
                       {"complex", t.tensor.complex},
                       {"offset", offset},
                       {"count", t.tensor.data.size()}});
    offset += t.tensor.data.size() * sizeof(double);
  }
  const std::string header = json{{"config", config}, {"tensors", entries}}.dump();
  std::string s = "HPEW";
  detail::put(s, static_cast<std::uint64_t>(header.size()));
  s += header;
  for (const auto& t : tensors)
    s.append(reinterpret_cast<const char*>(t.tensor.data.data()), t.tensor.data.size() * sizeof(double));
  return s;
}

inline Checkpoint decode_checkpoint(const std::string& s, const std::string& what = "HPEW") {
  if (s.size() < 4 || s.compare(0, 4, "HPEW") != 0) throw FormatError(what + ": bad magic (expected HPEW)");
  std::size_t pos = 4;
  const auto hlen = detail::take<std::uint64_t>(s, pos, what);
  if (hlen > s.size() - pos) throw FormatError(what + ": truncated header");
  Checkpoint c;
  json header;
  try {
    header = json::parse(s.substr(pos, hlen));
    c.config = header.at("config");
    const std::size_t base = pos + hlen;
    for (const auto& e : header.at("tensors")) {
      NamedTensor t;
      t.name = e.at("name").get<std::string>();
      const auto shape = e.at("shape").get<ad::Shape>();
      const auto count = e.at("count").get<std::size_t>();
      const auto off = e.at("offset").get<std::size_t>();
      t.tensor = ad::Tensor(shape, e.at("complex").get<bool>());
      if (t.tensor.data.size() != count) throw FormatError(what + ": tensor '" + t.name + "' count disagrees with shape");
      if (base + off + count * sizeof(double) > s.size()) throw FormatError(what + ": tensor '" + t.name + "' is truncated");
      std::memcpy(t.tensor.data.data(), s.data() + base + off, count * sizeof(double));
      c.tensors.push_back(std::move(t));
    }
  } catch (const json::exception& e) {
    throw FormatError(what + ": bad header: " + e.what());
  }
  return c;
}

inline void write_checkpoint(const fs::path& p, const Checkpoint& c) { detail::spit(p, encode_checkpoint(c.config, c.tensors)); }

inline Checkpoint read_checkpoint(const fs::path& p) { return decode_checkpoint(detail::slurp(p), p.string()); }

inline std::vector<std::pair<std::string, ad::Parameter*>> named_params(HPEModel& m) {
  std::vector<std::pair<std::string, ad::Parameter*>> out;
  if (m.level1)
    for (auto* p : m.level1->params()) out.emplace_back("level1." + p->name, p);
  if (m.level2)
    for (auto* p : m.level2->params()) out.emplace_back("level2." + p->name, p);
  return out;
}

inline void save_model(const fs::path& p, HPEModel& m, const json& extra = json::object()) {
  Checkpoint c;
  c.config = config::model_header(m);
  for (const auto& [k, v] : extra.items()) c.config[k] = v;
  for (auto& [name, par] : named_params(m)) c.tensors.push_back({name, par->value});
  write_checkpoint(p, c);
}

inline HPEModel load_model(const fs::path& p) {
  Checkpoint c = read_checkpoint(p);
  json header = c.config;
  for (const auto* k : {"train", "data", "seed"}) header.erase(k);
  HPEModel m = config::model_from_header(header);
  auto params = named_params(m);
  if (params.size() != c.tensors.size()) throw FormatError(p.string() + ": tensor count does not match the model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& [name, par] = params[i];
    const auto& t = c.tensors[i];
    if (t.name != name || t.tensor.shape != par->value.shape || t.tensor.complex != par->value.complex)
      throw FormatError(p.string() + ": tensor '" + t.name + "' does not match model tensor '" + name + "'");
    par->value.data = t.tensor.data;
  }
  return m;
}

// -------------------------------------------------------------------- CSV

inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Header row then one row per entry; '.' decimal, 17 significant digits, LF endings.
inline void write_csv(const fs::path& p, const std::vector<std::string>& header,
                      const std::vector<std::vector<double>>& rows) {
  std::string s;
  for (std::size_t i = 0; i < header.size(); ++i) s += (i ? "," : "") + header[i];
  s += '\n';
  for (const auto& r : rows) {
    if (r.size() != header.size()) throw ConfigError("write_csv: row width differs from header");
    for (std::size_t i = 0; i < r.size(); ++i) s += (i ? "," : "") + format_g17(r[i]);
    s += '\n';
  }
  detail::spit(p, s);
}

struct Csv {
  std::vector<std::string> header;
  std::vector<std::vector<double>> rows;

  std::size_t column(const std::string& name) const {
    const auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw FormatError("csv: no column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  }
};

inline Csv read_csv(const fs::path& p) {
  std::istringstream in(detail::slurp(p));
  Csv c;
  std::string line;
  auto split = [](const std::string& l) {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream ls(l);
    while (std::getline(ls, cell, ',')) out.push_back(cell);
    return out;
  };
  if (!std::getline(in, line)) throw FormatError(p.string() + ": empty csv");
  c.header = split(line);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    for (const auto& cell : split(line)) {
      std::size_t used = 0;
      double v = 0.0;
      try {
        v = std::stod(cell, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != cell.size() || cell.empty()) throw FormatError(p.string() + ": bad number '" + cell + "'");
      row.push_back(v);
    }
    if (row.size() != c.header.size()) throw FormatError(p.string() + ": row width differs from header");
    c.rows.push_back(std::move(row));
  }
  return c;
}

inline void write_bin_table(const fs::path& p, const dsr::BinTable& t) {
  std::vector<std::vector<double>> rows;
  for (std::size_t b = 0; b < t.n_bins; ++b)
    rows.push_back({t.midpoints[b], t.means[b], t.stds[b], static_cast<double>(t.counts[b])});
  write_csv(p, {"midpoint", "mean", "std", "count"}, rows);
}

inline dsr::BinTable read_bin_table(const fs::path& p) {
  const Csv c = read_csv(p);
  const std::size_t im = c.column("midpoint"), ie = c.column("mean"), is = c.column("std"), ic = c.column("count");
  dsr::BinTable t;
  t.n_bins = c.rows.size();
  for (const auto& r : c.rows) {
    t.midpoints.push_back(r[im]);
    t.means.push_back(r[ie]);
    t.stds.push_back(r[is]);
    if (!(r[ic] >= 0.0) || r[ic] != std::floor(r[ic])) throw FormatError(p.string() + ": count must be a whole number");
    t.counts.push_back(static_cast<std::size_t>(r[ic]));
  }
  return t;
}

// -------------------------------------------------------------------- PGM

struct PgmRange {
  double min = 0.0, max = 0.0;
};

/// 16-bit binary PGM, big-endian samples, row i of the field is image row i.
inline PgmRange write_pgm16(const fs::path& p, const RealField& f) {
  if (!f.finite()) throw NumericError("render: non-finite field", 0);
  PgmRange r{*std::min_element(f.values.begin(), f.values.end()), *std::max_element(f.values.begin(), f.values.end())};
  const double span = r.max - r.min;
  std::string s = "P5\n" + std::to_string(f.grid.ny) + " " + std::to_string(f.grid.nx) + "\n65535\n";
  for (double v : f.values) {
    const auto q = static_cast<std::uint16_t>(span > 0.0 ? std::lround((v - r.min) / span * 65535.0) : 0);
    s += static_cast<char>(q >> 8);
    s += static_cast<char>(q & 0xff);
  }
  detail::spit(p, s);
  write_json(sidecar_of(p), {{"min", r.min}, {"max", r.max}, {"nx", f.grid.nx}, {"ny", f.grid.ny}});
  return r;
}

/// Pixels mapped back through the recorded min/max.
inline RealField read_pgm16(const fs::path& p) {
  const std::string s = detail::slurp(p);
  std::istringstream in(s);
  std::string magic;
  std::size_t w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  if (magic != "P5") throw FormatError(p.string() + ": bad magic (expected P5)");
  if (maxval != 65535) throw FormatError(p.string() + ": expected 16-bit samples");
  in.get();
  const auto pos = static_cast<std::size_t>(in.tellg());
  if (s.size() - pos != 2 * w * h) throw FormatError(p.string() + ": pixel payload size mismatch");
  const json side = read_json(sidecar_of(p));
  const double lo = side.at("min").get<double>(), hi = side.at("max").get<double>();
  RealField f(GridSpec{h, w, 1.0, 1.0});
  for (std::size_t i = 0; i < w * h; ++i) {
    const auto q = static_cast<std::uint16_t>((static_cast<unsigned char>(s[pos + 2 * i]) << 8) |
                                              static_cast<unsigned char>(s[pos + 2 * i + 1]));
    f[i] = lo + (hi - lo) * static_cast<double>(q) / 65535.0;
  }
  return f;
}

}  // namespace hpe::io
