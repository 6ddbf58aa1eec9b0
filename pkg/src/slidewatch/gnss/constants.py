"""Physical constants and carrier frequencies used by the simulator."""

SPEED_OF_LIGHT = 299_792_458.0  # m/s
EARTH_ROTATION_RATE = 7.2921151467e-5  # rad/s
EARTH_GM = 3.986004418e14  # m^3/s^2

WGS84_A = 6_378_137.0
WGS84_F = 1.0 / 298.257223563
WGS84_E2 = WGS84_F * (2.0 - WGS84_F)

# Open-service signals. GPS L1, Galileo E1 and BDS B1C share 1575.42 MHz;
# BDS is modelled on B1I to keep a separate frequency group.
GPS_L1 = 1575.42e6
GALILEO_E1 = 1575.42e6
BDS_B1I = 1561.098e6
GLONASS_L1OC = 1600.995e6

STATION_RADIUS_RANGE = (6.3e6, 6.4e6)
# Upper bound admits Galileo (29 600 km) and BDS MEO (27 906 km) orbits.
SATELLITE_RADIUS_RANGE = (6.2e6, 3.0e7)

DEFAULT_ELEVATION_MASK_DEG = 10.0
