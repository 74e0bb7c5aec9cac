#include "flowmill/http_service.hpp"

#include "flowmill/errors.hpp"

#include <httplib.h>

#include <algorithm>
#include <thread>

namespace flowmill {

struct HttpService::Impl {
  const MetadataStore* meta = nullptr;
  httplib::Server server;
  std::thread worker;

  static void reply(httplib::Response& res, int status, const Json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  static void not_found(httplib::Response& res, const std::string& what) {
    reply(res, 404, Json{{"error", what}});
  }

  void wire_routes() {
    server.Get("/flows", [this](const httplib::Request&, httplib::Response& res) {
      reply(res, 200, Json(meta->list_flows()));
    });

    server.Get(R"(/flows/([^/]+)/runs)", [this](const httplib::Request& req,
                                                httplib::Response& res) {
      QueryFilter filter;
      filter.flow = req.matches[1];
      Json body = Json::array();
      for (const auto& run : meta->query_runs(filter))
        body.push_back(to_json(run));
      if (body.empty()) return not_found(res, "no runs of flow " + std::string(req.matches[1]));
      reply(res, 200, body);
    });

    server.Get(R"(/flows/([^/]+)/runs/(\d+))",
               [this](const httplib::Request& req, httplib::Response& res) {
                 auto run = meta->find_run(Pathspec::of_run(
                     req.matches[1], std::stoll(req.matches[2])));
                 if (!run) return not_found(res, "no such run");
                 reply(res, 200, to_json(*run));
               });

    server.Get(R"(/flows/([^/]+)/runs/(\d+)/tasks)",
               [this](const httplib::Request& req, httplib::Response& res) {
                 const Pathspec run_path = Pathspec::of_run(
                     req.matches[1], std::stoll(req.matches[2]));
                 if (!meta->find_run(run_path)) return not_found(res, "no such run");
                 Json body = Json::array();
                 for (const auto& task : meta->tasks_of_run(run_path))
                   body.push_back(to_json(task));
                 reply(res, 200, body);
               });

    server.set_error_handler([](const httplib::Request& req, httplib::Response& res) {
      if (res.body.empty())
        reply(res, res.status, Json{{"error", "no resource at " + req.path}});
    });
  }
};

HttpService::HttpService(const MetadataStore& meta) : impl_(new Impl) {
  impl_->meta = &meta;
  impl_->wire_routes();
}

HttpService::~HttpService() { stop(); }

int HttpService::start(const std::string& host, int port) {
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port(host);
    if (bound <= 0) raise(Errc::StoreIOError, "cannot bind " + host);
  } else if (!impl_->server.bind_to_port(host, port)) {
    raise(Errc::StoreIOError,
          "cannot bind " + host + ":" + std::to_string(port));
  }
  impl_->worker = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void HttpService::stop() {
  if (impl_->worker.joinable()) {
    impl_->server.stop();
    impl_->worker.join();
  }
}

}  // namespace flowmill
