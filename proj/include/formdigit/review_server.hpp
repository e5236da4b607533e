#pragma once

#include <httplib.h>

#include "formdigit/review.hpp"

namespace formdigit {

// Installs the /api routes on an existing server; exposed so tests can bind
// an ephemeral port.
void configure_review_routes(httplib::Server& server, ReviewQueue& queue);

}  // namespace formdigit
