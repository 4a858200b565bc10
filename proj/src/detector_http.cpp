#include "bytesleuth/detector.hpp"

#include "httplib.h"
#include "json.hpp"

namespace bytesleuth::det {

struct HttpDetector::Impl {
    httplib::Client client;
    Impl(const std::string& url, int timeout_ms) : client(url) {
        client.set_connection_timeout(timeout_ms / 1000, (timeout_ms % 1000) * 1000);
        client.set_read_timeout(timeout_ms / 1000, (timeout_ms % 1000) * 1000);
        client.set_write_timeout(timeout_ms / 1000, (timeout_ms % 1000) * 1000);
    }
};

HttpDetector::HttpDetector(std::string base_url, double threshold, int timeout_ms)
    : Detector(threshold, false), impl_(std::make_unique<Impl>(base_url, timeout_ms)) {}

HttpDetector::~HttpDetector() = default;

double HttpDetector::do_score(ByteView b) const {
    httplib::Result res = impl_->client.Post(
        "/score", reinterpret_cast<const char*>(b.data()), b.size(), "application/octet-stream");
    if (!res) {
        const httplib::Error err = res.error();
        if (err == httplib::Error::ConnectionTimeout || err == httplib::Error::Read ||
            err == httplib::Error::Write)
            fail(Errc::Timeout, "scorer request timed out (" + httplib::to_string(err) + ")");
        fail(Errc::RemoteUnavailable, "scorer unreachable (" + httplib::to_string(err) + ")");
    }
    if (res->status != 200)
        fail(Errc::MalformedReply, "scorer replied with status " + std::to_string(res->status));

    const nlohmann::json reply = nlohmann::json::parse(res->body, nullptr, false);
    if (reply.is_discarded() || !reply.is_object() || !reply.contains("score") ||
        !reply["score"].is_number())
        fail(Errc::MalformedReply, "reply is not an object with a numeric \"score\"");
    const double s = reply["score"].get<double>();
    if (!(s >= 0.0 && s <= 1.0))
        fail(Errc::MalformedReply, "score " + std::to_string(s) + " outside [0,1]");
    return s;
}

}  // namespace bytesleuth::det
