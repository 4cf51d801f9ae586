#include <cstdlib>
#include <fstream>
#include <sstream>

#include "crossinstruct/error.hpp"
#include "crossinstruct/models.hpp"

// After Eigen: <resolv.h> defines a _res macro.
#include <httplib.h>

namespace crossinstruct::models {

std::filesystem::path default_prompt_dir() {
  if (const char* env = std::getenv("CI_PROMPT_DIR")) return env;
  return CROSSINSTRUCT_PROMPT_DIR;
}

std::map<std::string, std::string> load_prompt_templates(const std::filesystem::path& dir) {
  std::map<std::string, std::string> out;
  for (auto k : kRequestKinds) {
    const auto path = dir / (std::string(k) + ".txt");
    out[std::string(k)] = read_file_text(path);
  }
  return out;
}

std::string render_prompt(std::string_view tmpl, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(tmpl.size());
  std::size_t i = 0;
  while (i < tmpl.size()) {
    if (tmpl[i] == '{') {
      const auto close = tmpl.find('}', i + 1);
      if (close != std::string_view::npos) {
        const std::string key(tmpl.substr(i + 1, close - i - 1));
        const auto it = values.find(key);
        if (it != values.end()) {
          out += it->second;
          i = close + 1;
          continue;
        }
      }
    }
    out.push_back(tmpl[i++]);
  }
  return out;
}

std::map<std::string, std::string> prompt_values(const ModelRequest& request) {
  const Json& p = request.payload;
  std::map<std::string, std::string> v;
  if (p.contains("annotated_image")) v["INSTRUCTION_IMAGE"] = "<image:" + p["annotated_image"].get<std::string>() + ">";
  if (p.contains("instruction")) {
    std::string labels;
    for (const auto& l : p["instruction"]["labels"]) labels += "- " + l["text"].get<std::string>() + "\n";
    v["INSTRUCTION_LABELS"] = labels;
  }
  if (p.contains("views")) {
    std::string views;
    for (const auto& view : p["views"]) {
      views += view["id"].get<std::string>() + ": <image:" + view["image"].get<std::string>() + ">\n";
    }
    v["VIEW_IMAGES"] = views;
  }
  if (p.contains("descriptors")) {
    std::ostringstream k;
    for (std::size_t i = 0; i < p["descriptors"].size(); ++i) {
      const auto& d = p["descriptors"][i];
      k << i << ". " << d["label"].get<std::string>();
      if (!d["metadata"].get<std::string>().empty()) k << " (" << d["metadata"].get<std::string>() << ")";
      for (const auto& pt : p["pointed"]) {
        if (pt["descriptor_index"].get<std::size_t>() == i) {
          k << " [" << pt["view_id"].get<std::string>() << ": " << canonical_json(pt["pixel"]) << "]";
        }
      }
      k << "\n";
    }
    v["KEYPOINTS"] = k.str();
  }
  if (p.contains("trajectory_3d")) v["TRAJECTORY_3D"] = canonical_json(p["trajectory_3d"]);
  if (p.contains("horizon")) v["HORIZON"] = std::to_string(p["horizon"].get<std::size_t>());
  if (p.contains("descriptor")) v["LABEL"] = p["descriptor"]["label"].get<std::string>();
  if (p.contains("image")) v["IMAGE"] = "<image:" + p["image"].get<std::string>() + ">";
  return v;
}

LiveBackend::LiveBackend(LiveConfig config) : config_(std::move(config)) {
  if (config_.base_url.empty()) fail(ErrorKind::kInvalidInput, "live backend needs a base URL", "base_url");
  if (config_.prompt_dir.empty()) config_.prompt_dir = default_prompt_dir();
  templates_ = load_prompt_templates(config_.prompt_dir);
}

Json LiveBackend::complete(const ModelRequest& request) {
  // Split "http://host:port/prefix" into the client origin and a path prefix.
  std::string origin = config_.base_url;
  std::string prefix;
  const auto scheme_end = origin.find("://");
  const auto path_start = origin.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  if (path_start != std::string::npos) {
    prefix = origin.substr(path_start);
    origin = origin.substr(0, path_start);
  }
  while (!prefix.empty() && prefix.back() == '/') prefix.pop_back();

  Json images = Json::object();
  for (const auto& [digest, image] : request.images) {
    const auto png = encode_png(*image);
    images[digest] = base64_encode(png);
  }
  const Json body{{"kind", request.kind},
                  {"prompt", render_prompt(templates_.at(request.kind), prompt_values(request))},
                  {"payload", request.payload},
                  {"images", images}};
  const std::string text = body.dump();

  httplib::Client client(origin);
  const auto secs = static_cast<time_t>(config_.timeout_seconds);
  const auto usecs = static_cast<time_t>((config_.timeout_seconds - static_cast<double>(secs)) * 1e6);
  client.set_connection_timeout(secs, usecs);
  client.set_read_timeout(secs, usecs);
  client.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  if (const char* token = std::getenv(config_.token_env.c_str())) {
    headers.emplace("Authorization", std::string("Bearer ") + token);
  }

  std::string last_error;
  const int attempts = config_.retries + 1;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    auto res = client.Post(prefix + "/v1/" + request.kind, headers, text, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500 || res->status == 429) {
      last_error = "HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      fail(ErrorKind::kTransport, "live backend returned HTTP " + std::to_string(res->status) + " for " + request.kind,
           request.kind);
    }
    try {
      return Json::parse(res->body);
    } catch (const Json::parse_error&) {
      fail(ErrorKind::kInvalidResponse, "live backend returned non-JSON body for " + request.kind, request.kind);
    }
  }
  fail(ErrorKind::kTransport,
       request.kind + " request failed after " + std::to_string(attempts) + " attempts (retries=" +
           std::to_string(config_.retries) + "): " + last_error,
       request.kind);
}

}  // namespace crossinstruct::models
