#pragma once
// HTTP front end for Service (cpp-httplib).

// service.hpp (and Eigen) first: <resolv.h>, pulled in by httplib, defines
// a `_res` macro that breaks Eigen's headers.
#include "driftfb/service.hpp"

#include <httplib.h>

#include <string>

namespace driftfb {

/// Registers catch-all routes forwarding every request to `service`.
inline void mount(httplib::Server& server, Service& service) {
  auto forward = [&service](const httplib::Request& req, httplib::Response& res) {
    const Response r = service.handle(req.method, req.path, req.body);
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  server.Get(".*", forward);
  server.Post(".*", forward);
  server.Delete(".*", forward);
}

}  // namespace driftfb
