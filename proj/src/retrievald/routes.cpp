#include "drilldown/retrievald.hpp"
#include "httplib.h"

namespace dd::serve {

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    send_json(res, 200, fn());
  } catch (const ServiceError& e) {
    json body = {{"error", e.what()}};
    if (e.session_status()) body["status"] = *e.session_status();
    send_json(res, e.status(), body);
  } catch (const std::exception& e) {
    send_json(res, 500, {{"error", e.what()}});
  }
}

json parse_body(const httplib::Request& req, bool allow_empty) {
  if (req.body.empty()) {
    if (allow_empty) return json();
    throw ServiceError(400, "request body is required");
  }
  try {
    return json::parse(req.body);
  } catch (const json::exception&) {
    throw ServiceError(400, "request body is not valid JSON");
  }
}

}  // namespace

void mount_routes(httplib::Server& server, Service& service) {
  server.set_default_headers({{"Access-Control-Allow-Origin", "*"},
                              {"Access-Control-Allow-Headers", "Content-Type"},
                              {"Access-Control-Allow-Methods", "GET, POST, OPTIONS"}});
  server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });

  server.Post("/api/session", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return service.create_session(parse_body(req, true)); });
  });
  server.Post(R"(/api/session/([^/]+)/query)", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return service.submit_query(req.matches[1], parse_body(req, false)); });
  });
  server.Get(R"(/api/session/([^/]+))", [&service](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { return service.get_session(req.matches[1]); });
  });
  server.Get(R"(/api/image/(-?\d+)\.svg)", [&service](const httplib::Request& req, httplib::Response& res) {
    try {
      res.set_content(service.image_svg(std::stoll(req.matches[1])), "image/svg+xml");
    } catch (const ServiceError& e) {
      send_json(res, e.status(), {{"error", e.what()}});
    } catch (const std::out_of_range&) {
      send_json(res, 404, {{"error", "unknown image"}});
    }
  });
}

}  // namespace dd::serve
