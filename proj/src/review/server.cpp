#include <httplib.h>

#include "formdigit/errors.hpp"
#include "formdigit/review.hpp"
#include "formdigit/review_server.hpp"

namespace formdigit {

namespace {

void send_json(httplib::Response& res, int status, const nlohmann::json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

nlohmann::json error_body(const std::string& kind, const std::string& message) {
  return {{"error", kind}, {"message", message}};
}

nlohmann::json item_view(const ReviewItem& it) {
  nlohmann::json j = review_item_to_json(it, false);
  j["crop_url"] = "/api/crops/" + it.id + ".png";
  return j;
}

}  // namespace

void configure_review_routes(httplib::Server& server, ReviewQueue& queue) {
  server.Get("/api/queue/next", [&queue](const httplib::Request&, httplib::Response& res) {
    const std::optional<ReviewItem> next = queue.next_pending();
    if (!next) {
      res.status = 204;
      return;
    }
    send_json(res, 200, item_view(*next));
  });

  server.Get(R"(/api/crops/(.+)\.png)", [&queue](const httplib::Request& req, httplib::Response& res) {
    const std::optional<ReviewItem> it = queue.find(req.matches[1]);
    if (!it) return send_json(res, 404, error_body("UnknownItem", req.matches[1]));
    if (it->crop.empty()) return send_json(res, 404, error_body("NoCrop", it->id));
    const std::vector<std::uint8_t> png = encode_png(upscale_nearest(it->crop, 8));
    res.status = 200;
    res.set_content(std::string(png.begin(), png.end()), "image/png");
  });

  server.Post(R"(/api/queue/(.+)/label)", [&queue](const httplib::Request& req, httplib::Response& res) {
    int label = 0;
    try {
      const nlohmann::json body = nlohmann::json::parse(req.body);
      label = parse_label(body.at("label").get<std::string>());
    } catch (const std::exception& e) {
      return send_json(res, 400, error_body("BadRequest", e.what()));
    }
    try {
      send_json(res, 200, item_view(queue.submit_label(req.matches[1], label)));
    } catch (const UnknownItem& e) {
      send_json(res, 404, error_body("UnknownItem", e.what()));
    } catch (const AlreadyLabeled& e) {
      send_json(res, 409, error_body("AlreadyLabeled", e.what()));
    }
  });

  server.Get("/api/stats", [&queue](const httplib::Request&, httplib::Response& res) {
    const QueueStats s = queue.stats();
    send_json(res, 200, {{"pending", s.pending}, {"labeled", s.labeled}, {"total", s.total}});
  });
}

void serve_review(ReviewQueue& queue, const std::string& host, int port,
                  const std::optional<std::filesystem::path>& static_dir) {
  httplib::Server server;
  configure_review_routes(server, queue);
  if (static_dir && !server.set_mount_point("/", static_dir->string()))
    throw std::runtime_error("static directory " + static_dir->string() + " does not exist");
  if (!server.listen(host, port)) throw std::runtime_error("cannot listen on " + host + ":" + std::to_string(port));
}

}  // namespace formdigit
