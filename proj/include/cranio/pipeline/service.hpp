#pragma once

// HTTP/JSON prediction service over the artifacts of a finished run.

#include "cranio/pipeline/predictor.hpp"

#include <httplib.h>

#include <deque>

namespace cranio::pipeline {

namespace gltf {

namespace detail {

inline void put_u32(std::string& s, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  s.append(b, 4);
}

inline std::string base64(const std::string& in) {
  static const char* t = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
  std::string out;
  out.reserve((in.size() + 2) / 3 * 4);
  std::size_t i = 0;
  for (; i + 2 < in.size(); i += 3) {
    const std::uint32_t n = (static_cast<unsigned char>(in[i]) << 16) | (static_cast<unsigned char>(in[i + 1]) << 8) |
                            static_cast<unsigned char>(in[i + 2]);
    out += t[n >> 18];
    out += t[(n >> 12) & 63];
    out += t[(n >> 6) & 63];
    out += t[n & 63];
  }
  if (i < in.size()) {
    std::uint32_t n = static_cast<unsigned char>(in[i]) << 16;
    if (i + 1 < in.size()) n |= static_cast<unsigned char>(in[i + 1]) << 8;
    out += t[n >> 18];
    out += t[(n >> 12) & 63];
    out += i + 1 < in.size() ? t[(n >> 6) & 63] : '=';
    out += '=';
  }
  return out;
}

// float32 positions followed by uint32 indices; both 4-byte aligned
inline std::string buffer(const mesh::TriMesh& m) {
  std::string b;
  b.reserve(12 * m.vertex_count() + 12 * m.triangle_count());
  for (const auto& v : m.vertices())
    for (int k = 0; k < 3; ++k) {
      const auto f = static_cast<float>(v[k]);
      b.append(reinterpret_cast<const char*>(&f), 4);
    }
  for (const auto& t : m.triangles())
    for (int k = 0; k < 3; ++k) put_u32(b, static_cast<std::uint32_t>(t[static_cast<std::size_t>(k)]));
  return b;
}

inline nlohmann::json document(const mesh::TriMesh& m, std::size_t buffer_bytes) {
  std::array<float, 3> lo{}, hi{};
  for (int k = 0; k < 3; ++k) {
    lo[static_cast<std::size_t>(k)] = std::numeric_limits<float>::max();
    hi[static_cast<std::size_t>(k)] = std::numeric_limits<float>::lowest();
  }
  for (const auto& v : m.vertices())
    for (std::size_t k = 0; k < 3; ++k) {
      lo[k] = std::min(lo[k], static_cast<float>(v[static_cast<Eigen::Index>(k)]));
      hi[k] = std::max(hi[k], static_cast<float>(v[static_cast<Eigen::Index>(k)]));
    }
  const std::size_t pos_bytes = 12 * m.vertex_count();
  using J = nlohmann::json;
  J primitive = {{"attributes", {{"POSITION", 0}}}, {"indices", 1}, {"mode", 4}};
  J doc = J::object();
  doc["asset"] = {{"version", "2.0"}, {"generator", "cranio"}};
  doc["scene"] = 0;
  doc["scenes"] = J::array({{{"nodes", J::array({0})}}});
  doc["nodes"] = J::array({{{"mesh", 0}}});
  doc["meshes"] = J::array({{{"primitives", J::array({primitive})}}});
  doc["buffers"] = J::array({{{"byteLength", buffer_bytes}}});
  doc["bufferViews"] = J::array(
      {{{"buffer", 0}, {"byteOffset", 0}, {"byteLength", pos_bytes}, {"target", 34962}},
       {{"buffer", 0}, {"byteOffset", pos_bytes}, {"byteLength", buffer_bytes - pos_bytes}, {"target", 34963}}});
  doc["accessors"] = J::array(
      {{{"bufferView", 0}, {"componentType", 5126}, {"count", m.vertex_count()}, {"type", "VEC3"}, {"min", lo},
        {"max", hi}},
       {{"bufferView", 1}, {"componentType", 5125}, {"count", 3 * m.triangle_count()}, {"type", "SCALAR"}}});
  return doc;
}

}  // namespace detail

/// glTF 2.0 JSON with the buffer embedded as a data URI.
inline std::string json_bytes(const mesh::TriMesh& m) {
  const auto buf = detail::buffer(m);
  auto doc = detail::document(m, buf.size());
  doc["buffers"][0]["uri"] = "data:application/octet-stream;base64," + detail::base64(buf);
  return doc.dump();
}

/// Binary glTF container: header, JSON chunk, BIN chunk.
inline std::string glb_bytes(const mesh::TriMesh& m) {
  const auto buf = detail::buffer(m);
  std::string js = detail::document(m, buf.size()).dump();
  while (js.size() % 4) js += ' ';
  std::string out;
  detail::put_u32(out, 0x46546C67);  // "glTF"
  detail::put_u32(out, 2);
  detail::put_u32(out, static_cast<std::uint32_t>(12 + 8 + js.size() + 8 + buf.size()));
  detail::put_u32(out, static_cast<std::uint32_t>(js.size()));
  detail::put_u32(out, 0x4E4F534A);  // "JSON"
  out += js;
  detail::put_u32(out, static_cast<std::uint32_t>(buf.size()));
  detail::put_u32(out, 0x004E4942);  // "BIN\0"
  out += buf;
  return out;
}

}  // namespace gltf

/// Mesh format chosen from an Accept header; STL unless glTF is asked for.
enum class MeshFormat { Stl, Glb, GltfJson };

inline MeshFormat negotiate_mesh_format(const std::string& accept, const std::string& format_param = "") {
  if (format_param == "glb") return MeshFormat::Glb;
  if (format_param == "gltf") return MeshFormat::GltfJson;
  if (format_param == "stl") return MeshFormat::Stl;
  if (accept.find("model/gltf-binary") != std::string::npos) return MeshFormat::Glb;
  if (accept.find("model/gltf+json") != std::string::npos) return MeshFormat::GltfJson;
  return MeshFormat::Stl;
}

class Service {
 public:
  explicit Service(std::filesystem::path work_dir, std::vector<doe::SpringModel> catalog = doe::default_spring_catalog(),
                   std::size_t cache_size = 256)
      : work_dir_(std::move(work_dir)), catalog_(std::move(catalog)), cache_size_(cache_size) {
    routes();
  }

  /// Loads artifacts from the work directory and swaps them in. On failure
  /// the previous artifacts stay active.
  void reload() {
    auto a = load_artifacts(work_dir_);
    auto copy = std::make_shared<Artifacts>(*a);
    copy->spring_catalog = catalog_;
    set(std::move(copy));
  }

  void set(std::shared_ptr<const Artifacts> a) {
    std::lock_guard lock(mutex_);
    artifacts_ = std::move(a);
    cache_.clear();
    order_.clear();
  }

  std::shared_ptr<const Artifacts> artifacts() const {
    std::lock_guard lock(mutex_);
    return artifacts_;
  }

  httplib::Server& server() { return server_; }

  bool listen(const std::string& host, int port) { return server_.listen(host, port); }
  int bind_any(const std::string& host = "127.0.0.1") { return server_.bind_to_any_port(host); }
  bool listen_after_bind() { return server_.listen_after_bind(); }
  void stop() { server_.stop(); }

 private:
  static void send_json(httplib::Response& res, int status, const nlohmann::json& j) {
    res.status = status;
    res.set_content(j.dump(), "application/json");
  }
  static void send_error(httplib::Response& res, int status, const std::string& msg,
                         const nlohmann::json& detail = nlohmann::json::object()) {
    nlohmann::json j = detail.is_object() ? detail : nlohmann::json::object();
    j["error"] = msg;
    send_json(res, status, j);
  }

  std::shared_ptr<const Artifacts> ready(httplib::Response& res) const {
    auto a = artifacts();
    if (!a) send_error(res, 503, "artifacts not loaded");
    return a;
  }

  std::string remember(const std::string& id, const Eigen::VectorXd& b_out) {
    std::lock_guard lock(mutex_);
    if (!cache_.count(id)) {
      cache_.emplace(id, b_out);
      order_.push_back(id);
      while (order_.size() > cache_size_) {
        cache_.erase(order_.front());
        order_.pop_front();
      }
    }
    return id;
  }

  std::optional<Eigen::VectorXd> recall(const std::string& id) const {
    std::lock_guard lock(mutex_);
    const auto it = cache_.find(id);
    if (it == cache_.end()) return std::nullopt;
    return it->second;
  }

  nlohmann::json info(const Artifacts& a) const {
    nlohmann::json catalog = nlohmann::json::array();
    for (const auto& s : a.spring_catalog) catalog.push_back({{"id", s.id}, {"k", s.stiffness}, {"L0", s.free_length}});
    nlohmann::json metrics = nlohmann::json::object();
    if (a.evaluation.is_object()) {
      metrics["test"] = a.evaluation.value("test", nlohmann::json::object());
      metrics["linear_baseline"] = a.evaluation.value("linear_baseline", nlohmann::json::object());
    }
    metrics["cv"] = a.model.meta.value("cv", nlohmann::json::object());
    return {{"k_in", a.k_in()},
            {"k_out", a.k_out()},
            {"model", a.model.spec.to_json()},
            {"feature_names", a.model.feature_names},
            {"target_names", a.model.target_names},
            {"metrics", metrics},
            {"hashes",
             {{"model_sha256", a.model_sha256}, {"ssm_in_sha256", a.ssm_in_sha256}, {"ssm_out_sha256", a.ssm_out_sha256}}},
            {"bounds",
             {{"A", {doe::kBoundA.lo, doe::kBoundA.hi}},
              {"AP", {doe::kBoundAP.lo, doe::kBoundAP.hi}},
              {"LAT", {doe::kBoundLAT.lo, doe::kBoundLAT.hi}}}},
            {"spring_catalog", catalog},
            {"vertex_count", a.topology.vertex_count()}};
  }

  void routes() {
    server_.Get("/health", [this](const httplib::Request&, httplib::Response& res) {
      send_json(res, 200, {{"status", "ok"}, {"ready", artifacts() != nullptr}});
    });

    server_.Get("/model/info", [this](const httplib::Request&, httplib::Response& res) {
      if (const auto a = ready(res)) send_json(res, 200, info(*a));
    });

    server_.Post("/predict", [this](const httplib::Request& req, httplib::Response& res) {
      const auto a = ready(res);
      if (!a) return;
      const auto body = nlohmann::json::parse(req.body, nullptr, false);
      if (body.is_discarded()) return send_error(res, 400, "request body is not valid JSON");
      try {
        const auto r = parse_request(body, a->k_in());
        const auto p = a->predict(r);
        const auto id = util::sha256_hex(request_json(r).dump() + a->model_sha256).substr(0, 24);
        remember(id, p.b_out);
        auto j = prediction_json(p);
        j["mesh_url"] = "/mesh/" + id;
        send_json(res, 200, j);
      } catch (const RequestError& e) {
        send_error(res, e.status(), e.what(), e.detail());
      } catch (const surrogate::DimensionError& e) {
        send_error(res, 422, e.what());
      }
    });

    server_.Get(R"(/mesh/([0-9a-f]+))", [this](const httplib::Request& req, httplib::Response& res) {
      const auto a = ready(res);
      if (!a) return;
      const auto b = recall(req.matches[1]);
      if (!b) return send_error(res, 404, "unknown mesh id");
      const auto m = a->reconstruct_out(*b);
      switch (negotiate_mesh_format(req.get_header_value("Accept"), req.get_param_value("format"))) {
        case MeshFormat::Glb: res.set_content(gltf::glb_bytes(m), "model/gltf-binary"); break;
        case MeshFormat::GltfJson: res.set_content(gltf::json_bytes(m), "model/gltf+json"); break;
        case MeshFormat::Stl: res.set_content(mesh::stl_bytes(m), "model/stl"); break;
      }
    });

    server_.Post("/reload", [this](const httplib::Request&, httplib::Response& res) {
      try {
        reload();
        send_json(res, 200, {{"status", "reloaded"}});
      } catch (const HashMismatchError& e) {
        send_error(res, 409, e.what(), {{"diff", e.diff()}});
      } catch (const std::exception& e) {
        send_error(res, 500, e.what());
      }
    });

    server_.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
      try {
        std::rethrow_exception(ep);
      } catch (const std::exception& e) {
        send_error(res, 500, e.what());
      } catch (...) {
        send_error(res, 500, "unknown error");
      }
    });

    server_.set_default_headers({{"Access-Control-Allow-Origin", "*"}});
    server_.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
      res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
      res.set_header("Access-Control-Allow-Headers", "Content-Type, Accept");
      res.status = 204;
    });
  }

  std::filesystem::path work_dir_;
  std::vector<doe::SpringModel> catalog_;
  std::size_t cache_size_;
  mutable std::mutex mutex_;
  std::shared_ptr<const Artifacts> artifacts_;
  std::map<std::string, Eigen::VectorXd> cache_;
  std::deque<std::string> order_;
  httplib::Server server_;
};

}  // namespace cranio::pipeline
