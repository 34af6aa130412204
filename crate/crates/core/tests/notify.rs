mod common;

use std::net::{Ipv4Addr, UdpSocket};
use std::time::Duration;

use common::*;
use garden_core::closure::{export, notify, notify_configured, ExportMode};

const GROUP: Ipv4Addr = Ipv4Addr::new(239, 255, 71, 7);

fn listener() -> (UdpSocket, u16) {
    let sock = UdpSocket::bind((Ipv4Addr::UNSPECIFIED, 0)).unwrap();
    sock.join_multicast_v4(&GROUP, &Ipv4Addr::LOCALHOST).unwrap();
    sock.set_read_timeout(Some(Duration::from_millis(500))).unwrap();
    let port = sock.local_addr().unwrap().port();
    (sock, port)
}

#[test]
fn listener_receives_exact_payload() {
    let (sock, port) = listener();
    let h = fixture_name("notify", "toy-1.0");
    notify(&h, &format!("{GROUP}:{port}"), Some(Ipv4Addr::LOCALHOST)).unwrap();
    let mut buf = [0u8; 256];
    let n = sock.recv(&mut buf).unwrap();
    assert_eq!(std::str::from_utf8(&buf[..n]).unwrap(), format!("GARDEN-NEW 1 {h}\n"));
}

#[test]
fn export_without_group_sends_nothing() {
    let (sock, _port) = listener();
    let mut g = Garden::new();
    let h = fixture_name("quiet", "toy-1.0");
    install_fixture(&g.public, &h, &[("bin/x", "x", 0o755)], &[]);
    g.config.notify_group = None;
    export(&h, &g.path("dest"), ExportMode::Full, &g.config).unwrap();
    notify_configured(&h, &g.config);
    let mut buf = [0u8; 64];
    assert!(sock.recv(&mut buf).is_err(), "no datagram expected");
}

#[test]
fn bad_group_is_only_a_warning() {
    let mut g = Garden::new();
    let h = fixture_name("warn", "toy-1.0");
    g.config.notify_group = Some("nonsense".into());
    notify_configured(&h, &g.config);
}
