#pragma once

#include <string>
#include <utility>

namespace factguard::http {

// "http://host:8000/api" -> {"http://host:8000", "/api"}. The prefix has no
// trailing slash.
std::pair<std::string, std::string> split_url(const std::string& url);

// First 200 bytes of a response body for error messages.
std::string excerpt(const std::string& body);

}  // namespace factguard::http
