#pragma once

#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "avoidance.hpp"
#include "gcs.hpp"
#include "transport.hpp"

namespace fleetsim::ui {

inline constexpr int kUiProtocolVersion = 1;

/// Feed messages, one JSON object per line, all carrying "v" and "type".
std::string fleet_snapshot_json(const gcs::GroundStation& station, double now);
std::string map_delta_json(const std::vector<gcs::MapPoint>& points, std::size_t from, std::size_t to);
std::string event_json(const gcs::GcsEvent& e);

/// Field, chosen pixel and range image for the latest scan of a UAV, as the
/// ground sees it: image around the scan pose, command toward the current target.
struct AvoidanceView {
  avoidance::SphericalRangeImage image;
  avoidance::PotentialField field;
  avoidance::AdjustedCommand chosen;
  std::vector<std::uint8_t> dump;  // PFG1 layout
};
std::optional<AvoidanceView> avoidance_view(const gcs::GroundStation& station, const protocol::Uuid& uav,
                                            const avoidance::AvoidanceParams& params = {});
std::string avoidance_json(const protocol::Uuid& uav, double now, const AvoidanceView& view);

/// Executes one command line; returns the "ack" line. Never throws.
class CommandHandler {
 public:
  explicit CommandHandler(gcs::GroundStation& station, double carrot_min_interval = 0.1)
      : station_(station), carrot_interval_(carrot_min_interval) {}
  std::string handle(const std::string& line, double now);

 private:
  gcs::GroundStation& station_;
  double carrot_interval_;
  std::map<protocol::Uuid, double> last_carrot_;
};

struct UiServerConfig {
  double snapshot_period = 0.2;
  double avoidance_period = 0.5;
  std::size_t max_map_points_per_message = 2000;
};

/// JSON-lines operator feed and command channel over any byte connection.
/// poll() is called from the ground-station loop; it never blocks.
class UiServer {
 public:
  UiServer(gcs::GroundStation& station, UiServerConfig config = {});

  /// Starts accepting TCP clients; port 0 picks a free port.
  std::uint16_t listen(const transport::Endpoint& ep);
  void add_client(std::unique_ptr<transport::Connection> conn);
  void poll(double now);
  std::size_t client_count() const { return clients_.size(); }

 private:
  struct Client {
    std::unique_ptr<transport::Connection> conn;
    std::string inbuf;
    std::size_t map_cursor = 0;
    std::size_t event_cursor = 0;
    bool greeted = false;
  };
  void send_line(Client& c, const std::string& line);

  gcs::GroundStation& station_;
  UiServerConfig config_;
  CommandHandler commands_;
  std::unique_ptr<transport::TcpListener> listener_;
  std::vector<Client> clients_;
  double last_snapshot_ = -1e300;
  double last_avoidance_ = -1e300;
};

}  // namespace fleetsim::ui
