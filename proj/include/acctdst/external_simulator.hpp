#pragma once

#include <httplib.h>

#include <string>

#include "acctdst/friction.hpp"

namespace acctdst {

/// Asks a remote chat endpoint. Request body:
///   {"history": [{"system": "...", "user": "..."}, ...], "question_text": "..."}
/// The reply is either a JSON object with a "reply" string or plain text; it is
/// read with parse_reply. Each question gets one retry after a failed call.
class ExternalClientSimulator : public UserSimulator {
 public:
  // `base_url` like "http://127.0.0.1:8090"; `path` the endpoint path.
  ExternalClientSimulator(std::string base_url, std::string path = "/answer",
                          int timeout_seconds = 10)
      : base_url_(std::move(base_url)), path_(std::move(path)), timeout_(timeout_seconds) {}

  std::optional<UserAnswer> answer(const std::vector<Turn>& history,
                                   const FrictionQuestion& q) override {
    json hist = json::array();
    for (const auto& t : history)
      hist.push_back({{"system", t.system_utterance}, {"user", t.user_utterance}});
    const std::string body = json{{"history", hist}, {"question_text", q.rendered_text}}.dump();
    for (int attempt = 0; attempt < 2; ++attempt) {
      httplib::Client cli(base_url_);
      cli.set_connection_timeout(timeout_, 0);
      cli.set_read_timeout(timeout_, 0);
      auto res = cli.Post(path_, body, "application/json");
      if (!res || res->status != 200) {
        log(LogLevel::kWarn, "simulator call failed (attempt " + std::to_string(attempt + 1) + ")");
        continue;
      }
      std::string text = res->body;
      try {
        const auto j = json::parse(res->body);
        if (j.is_object() && j.contains("reply")) text = j.at("reply").get<std::string>();
      } catch (const json::exception&) {
      }
      auto a = parse_reply(text, q.kind);
      if (!a) log(LogLevel::kWarn, "unparseable simulator reply for " + q.id + ": " + text);
      return a;
    }
    return std::nullopt;
  }

  std::string name() const override { return "external"; }

 private:
  std::string base_url_;
  std::string path_;
  int timeout_;
};

}  // namespace acctdst
