#include "tmxl/io.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace tmxl {

namespace {

void dump_into(std::string& out, const Json& j, int indent, int depth) {
  auto newline = [&](int d) {
    if (indent < 0) return;
    out += '\n';
    out.append(static_cast<std::size_t>(indent * d), ' ');
  };
  switch (j.type()) {
    case Json::value_t::object: {
      if (j.empty()) {
        out += "{}";
        return;
      }
      out += '{';
      bool first = true;
      for (auto it = j.begin(); it != j.end(); ++it) {
        if (!first) out += ',';
        first = false;
        newline(depth + 1);
        out += Json(it.key()).dump();
        out += indent < 0 ? ":" : ": ";
        dump_into(out, it.value(), indent, depth + 1);
      }
      newline(depth);
      out += '}';
      return;
    }
    case Json::value_t::array: {
      if (j.empty()) {
        out += "[]";
        return;
      }
      out += '[';
      bool first = true;
      for (const auto& v : j) {
        if (!first) out += ',';
        first = false;
        newline(depth + 1);
        dump_into(out, v, indent, depth + 1);
      }
      newline(depth);
      out += ']';
      return;
    }
    case Json::value_t::number_float: {
      const double x = j.get<double>();
      if (!std::isfinite(x)) {
        out += "null";
        return;
      }
      char buf[40];
      std::snprintf(buf, sizeof buf, "%.17g", x);
      out += buf;
      return;
    }
    default:
      out += j.dump();
  }
}

std::filesystem::path sidecar_of(const std::filesystem::path& p) {
  std::filesystem::path s = p;
  s.replace_extension(".f64");
  return s;
}

}  // namespace

std::string dump_json(const Json& j, int indent) {
  std::string out;
  dump_into(out, j, indent, 0);
  return out;
}

void write_json_file(const std::filesystem::path& path, const Json& j) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::BadInput, "cannot write " + path.string());
  f << dump_json(j, 2) << '\n';
}

Json read_json_file(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(Errc::BadInput, "cannot read " + path.string());
  try {
    return Json::parse(f);
  } catch (const Json::exception& e) {
    throw Error(Errc::BadInput, path.string() + ": " + e.what());
  }
}

Json target_to_json(const Target& t) {
  Json j;
  j["kind"] = t.kind_name();
  if (auto* s = std::get_if<RoundSphere>(&t.shape())) {
    j["radius"] = s->radius;
    j["ambient_dim"] = s->ambient_dim;
  } else if (auto* c = std::get_if<CliffordProduct>(&t.shape())) {
    j["r1"] = c->r1;
    j["r2"] = c->r2;
  } else {
    j["semi_axes"] = std::get<Ellipsoid>(t.shape()).semi_axes;
  }
  return j;
}

Target target_from_json(const Json& j) {
  try {
    const std::string kind = j.at("kind").get<std::string>();
    TargetTolerances tol;
    if (j.contains("tolerances")) {
      const Json& tj = j["tolerances"];
      tol.on_manifold = tj.value("on_manifold", tol.on_manifold);
      tol.tangent = tj.value("tangent", tol.tangent);
      tol.newton = tj.value("newton", tol.newton);
      tol.newton_max_iter = tj.value("newton_max_iter", tol.newton_max_iter);
    }
    if (kind == "round_sphere")
      return Target(RoundSphere{j.value("radius", 1.0), j.at("ambient_dim").get<int>()}, tol);
    if (kind == "clifford_product") return Target(CliffordProduct{j.value("r1", 1.0), j.value("r2", 1.0)}, tol);
    if (kind == "ellipsoid") return Target(Ellipsoid{j.at("semi_axes").get<std::vector<double>>()}, tol);
    throw Error(Errc::BadInput, "unknown target kind " + kind);
  } catch (const Json::exception& e) {
    throw Error(Errc::BadInput, std::string("target: ") + e.what());
  }
}

Json complex_to_json(Complex z) { return Json::array({z.real(), z.imag()}); }

Complex complex_from_json(const Json& j) {
  if (!j.is_array() || j.size() != 2) throw Error(Errc::BadInput, "expected [re, im]");
  return {j[0].get<double>(), j[1].get<double>()};
}

namespace {
constexpr char kAlphabet[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(std::span<const unsigned char> bytes) {
  std::string out;
  out.reserve((bytes.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < bytes.size(); i += 3) {
    const unsigned v = (bytes[i] << 16) | (bytes[i + 1] << 8) | bytes[i + 2];
    for (int s = 18; s >= 0; s -= 6) out += kAlphabet[(v >> s) & 63];
  }
  const std::size_t rest = bytes.size() - i;
  if (rest > 0) {
    unsigned v = bytes[i] << 16;
    if (rest == 2) v |= bytes[i + 1] << 8;
    out += kAlphabet[(v >> 18) & 63];
    out += kAlphabet[(v >> 12) & 63];
    out += rest == 2 ? kAlphabet[(v >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

std::vector<unsigned char> base64_decode(const std::string& text) {
  int table[256];
  std::fill(std::begin(table), std::end(table), -1);
  for (int k = 0; k < 64; ++k) table[static_cast<unsigned char>(kAlphabet[k])] = k;
  std::vector<unsigned char> out;
  unsigned v = 0;
  int bits = 0;
  for (char ch : text) {
    if (ch == '=' || std::isspace(static_cast<unsigned char>(ch))) continue;
    const int d = table[static_cast<unsigned char>(ch)];
    if (d < 0) throw Error(Errc::BadInput, "invalid base64 payload");
    v = (v << 6) | static_cast<unsigned>(d);
    bits += 6;
    if (bits >= 8) {
      bits -= 8;
      out.push_back(static_cast<unsigned char>((v >> bits) & 0xFF));
    }
  }
  return out;
}

void save_map(const TorusMap& u, const std::filesystem::path& path, NodeEncoding enc) {
  Json j;
  j["version"] = 1;
  j["target"] = target_to_json(u.target());
  j["N"] = u.ambient_dim();
  j["grid"] = {u.na(), u.nb()};
  j["tau"] = complex_to_json(u.tau());
  const auto data = u.data();
  const auto* bytes = reinterpret_cast<const unsigned char*>(data.data());
  const std::size_t nbytes = data.size() * sizeof(double);
  if (enc == NodeEncoding::Sidecar) {
    const auto side = sidecar_of(path);
    std::ofstream f(side, std::ios::binary);
    if (!f) throw Error(Errc::BadInput, "cannot write " + side.string());
    f.write(reinterpret_cast<const char*>(bytes), static_cast<std::streamsize>(nbytes));
    j["data"] = {{"encoding", "raw"}, {"file", side.filename().string()}};
  } else {
    j["data"] = {{"encoding", "base64"}, {"payload", base64_encode({bytes, nbytes})}};
  }
  write_json_file(path, j);
}

TorusMap load_map(const std::filesystem::path& path) {
  const Json j = read_json_file(path);
  try {
    if (j.at("version").get<int>() != 1) throw Error(Errc::BadInput, "unsupported map file version");
    const Target target = target_from_json(j.at("target"));
    const int N = j.at("N").get<int>();
    if (N != target.ambient_dim()) throw Error(Errc::BadInput, "N does not match the target");
    const int na = j.at("grid")[0].get<int>(), nb = j.at("grid")[1].get<int>();
    if (na < kMinGrid || nb < kMinGrid) throw Error(Errc::BadInput, "grid must be at least 8 x 8");
    const Mark mark(complex_from_json(j.at("tau")));
    const std::size_t count = static_cast<std::size_t>(na) * nb * N;
    std::vector<double> nodes(count);
    const Json& d = j.at("data");
    const std::string enc = d.at("encoding").get<std::string>();
    if (enc == "raw") {
      const auto side = path.parent_path() / d.at("file").get<std::string>();
      std::ifstream f(side, std::ios::binary);
      if (!f) throw Error(Errc::BadInput, "cannot read " + side.string());
      f.read(reinterpret_cast<char*>(nodes.data()), static_cast<std::streamsize>(count * sizeof(double)));
      if (static_cast<std::size_t>(f.gcount()) != count * sizeof(double) || f.peek() != EOF)
        throw Error(Errc::BadInput, "sidecar size does not match the header");
    } else if (enc == "base64") {
      const auto bytes = base64_decode(d.at("payload").get<std::string>());
      if (bytes.size() != count * sizeof(double)) throw Error(Errc::BadInput, "payload size does not match the header");
      std::memcpy(nodes.data(), bytes.data(), bytes.size());
    } else {
      throw Error(Errc::BadInput, "unknown node encoding " + enc);
    }
    for (std::size_t n = 0; n < count / N; ++n) {
      Eigen::Map<Eigen::VectorXd> p(nodes.data() + n * N, N);
      if (!p.allFinite()) throw Error(Errc::BadInput, "non-finite node value");
      if (target.manifold_residual(p) <= 1e-12) continue;
      double moved = 0.0;
      const Point q = target.project_unchecked(p, &moved);
      if (!(moved <= 1e-6) || !(target.focal_depth(p) < target.tube_radius()))
        throw Error(Errc::NotOnManifold, "node correction exceeds 1e-6");
      p = q;
    }
    return TorusMap(target, mark, na, nb, std::move(nodes));
  } catch (const Json::exception& e) {
    throw Error(Errc::BadInput, path.string() + ": " + e.what());
  }
}

}  // namespace tmxl
