"""Published profile counts and acceleration factors for t = 1..30 s (TR 2.6 ms, 50 frames)."""

P_LIST = (7, 15, 23, 30, 38, 46, 53, 61, 69, 77, 84, 92, 100, 107, 115, 123, 130, 138, 146, 153,
          161, 169, 176, 184, 192, 200, 207, 215, 223, 230)
R_LIST = (41.96, 19.58, 12.77, 9.79, 7.73, 6.39, 5.54, 4.82, 4.26, 3.81, 3.5, 3.19, 2.94, 2.74, 2.55,
          2.39, 2.26, 2.13, 2.01, 1.92, 1.83, 1.74, 1.67, 1.60, 1.53, 1.47, 1.42, 1.37, 1.32, 1.28)
# floor(10 * 1000 / (2.6 * 50)) = floor(76.92) = 76; the published list prints 77
KNOWN_P_DEVIATION = {10: (76, 77)}
