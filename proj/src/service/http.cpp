#include <httplib.h>

#include "partloc/dataset/image.hpp"
#include "partloc/dataset/labels.hpp"
#include "partloc/dataset/project.hpp"
#include "partloc/inference/analysis.hpp"
#include "partloc/scoremap/scoremap.hpp"
#include "partloc/service/service.hpp"
#include "partloc/training/trainer.hpp"

namespace partloc::service {

namespace {

void send_json(httplib::Response& res, const Json& body, int status = 200) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message) {
  send_json(res, {{"error", message}, {"code", code}}, status);
}

Json parse_body(const httplib::Request& req) {
  if (req.body.empty()) return Json::object();
  try {
    return Json::parse(req.body);
  } catch (const Json::parse_error& e) {
    throw ServiceError(400, "bad_request", std::string("request body is not valid JSON: ") + e.what());
  }
}

template <typename F>
httplib::Server::Handler guarded(F f) {
  return [f](const httplib::Request& req, httplib::Response& res) {
    try {
      f(req, res);
    } catch (const ServiceError& e) {
      send_error(res, e.status(), e.code(), e.what());
    } catch (const Json::exception& e) {
      send_error(res, 400, "bad_request", e.what());
    } catch (const dataset::ProjectError& e) {
      send_error(res, 400, "bad_request", e.what());
    } catch (const scoremap::LabelValidationError& e) {
      send_error(res, 400, "bad_request", e.what());
    } catch (const dataset::LabelFormatError& e) {
      send_error(res, 500, "corrupt_labels", e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, "internal", e.what());
    }
  };
}

std::optional<std::uint64_t> opt_u64(const Json& body, const char* key) {
  if (!body.contains(key) || body[key].is_null()) return std::nullopt;
  return body[key].get<std::uint64_t>();
}

}  // namespace

struct HttpServer::Impl {
  ProjectService& service;
  httplib::Server server;
  std::thread thread;

  explicit Impl(ProjectService& s) : service(s) {
    auto& svc = service;
    server.Get("/api/projects", guarded([&svc](const auto&, auto& res) { send_json(res, svc.list_projects()); }));
    server.Post("/api/projects", guarded([&svc](const auto& req, auto& res) {
                  send_json(res, svc.create_project(parse_body(req)), 201);
                }));
    server.Get(R"(/api/projects/([^/]+)/frames)", guarded([&svc](const auto& req, auto& res) {
                 send_json(res, svc.list_frames(req.matches[1]));
               }));
    server.Get(R"(/api/projects/([^/]+)/refine-queue)", guarded([&svc](const auto& req, auto& res) {
                 const auto limit = req.has_param("limit") ? std::stoull(req.get_param_value("limit")) : 0;
                 send_json(res, svc.refine_queue(req.matches[1], req.get_param_value("sequence"), limit));
               }));
    server.Post(R"(/api/projects/([^/]+)/train)", guarded([&svc](const auto& req, auto& res) {
                  const auto body = parse_body(req);
                  TrainRequest t;
                  t.steps = body.value("steps", std::int64_t{0});
                  t.snapshot_interval = body.value("snapshot_interval", std::int64_t{0});
                  t.seed = opt_u64(body, "seed");
                  t.split_seed = opt_u64(body, "split_seed");
                  if (body.contains("train_fraction")) t.train_fraction = body["train_fraction"].template get<double>();
                  t.scorer = body.value("scorer", std::string());
                  send_json(res, job_to_json(svc.start_training(req.matches[1], t)), 202);
                }));
    server.Post(R"(/api/projects/([^/]+)/analyze)", guarded([&svc](const auto& req, auto& res) {
                  send_json(res, svc.analyze(req.matches[1], parse_body(req)));
                }));
    server.Get(R"(/api/train/([^/]+))", guarded([&svc](const auto& req, auto& res) {
                 send_json(res, job_to_json(svc.job(req.matches[1])));
               }));
    server.Post(R"(/api/train/([^/]+)/cancel)", guarded([&svc](const auto& req, auto& res) {
                  send_json(res, job_to_json(svc.cancel_job(req.matches[1])));
                }));
    server.Get(R"(/api/frames/(.+)/image)", guarded([&svc](const auto& req, auto& res) {
                 std::optional<std::size_t> preview;
                 if (req.has_param("preview")) {
                   const auto v = req.get_param_value("preview");
                   preview = (v.empty() || v == "1" || v == "true") ? 256 : std::stoull(v);
                 }
                 res.set_content(svc.frame_image(req.matches[1], preview), "image/png");
               }));
    server.Get(R"(/api/frames/(.+)/labels)", guarded([&svc](const auto& req, auto& res) {
                 send_json(res, svc.get_labels(req.matches[1], req.get_param_value("scorer")));
               }));
    server.Put(R"(/api/frames/(.+)/labels)", guarded([&svc](const auto& req, auto& res) {
                 send_json(res, svc.put_labels(req.matches[1], parse_body(req)));
               }));
    server.Post(R"(/api/frames/(.+)/accept-prediction)", guarded([&svc](const auto& req, auto& res) {
                  send_json(res, svc.accept_prediction(req.matches[1], parse_body(req)));
                }));
    server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
      if (res.body.empty()) send_error(res, res.status, "not_found", "no such endpoint");
    });
  }
};

HttpServer::HttpServer(ProjectService& service) : impl_(std::make_unique<Impl>(service)) {}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound <= 0) throw ServiceError(500, "bind_failed", "cannot listen on " + host + ":" + std::to_string(port));
  return bound;
}

void HttpServer::listen() { impl_->server.listen_after_bind(); }

int HttpServer::start(const std::string& host, int port) {
  const int bound = bind(host, port);
  impl_->thread = std::thread([this] { listen(); });
  impl_->server.wait_until_ready();
  return bound;
}

void HttpServer::stop() {
  impl_->server.stop();
  if (impl_->thread.joinable()) impl_->thread.join();
}

}  // namespace partloc::service
