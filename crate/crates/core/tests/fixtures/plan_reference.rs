// Generated by plan_reference.py; do not edit.
const PLAN_REFERENCE: [(f64, f64, f64, f64, f64, usize, f64); 50] = [
    (0.181895, 1.3442, 4.14532, -0.124204, 0.05385, 4, 1158.4230502422097),
    (0.043722, 1.686, 0.14736, -0.004119, 0.01776, 2, 9.165336826429426),
    (0.006499, 1.8267, 0.63271, -0.29417, 0.43299, 4, 44.5834948546464),
    (0.031971, 1.2362, 0.2728, -0.011849, 0.02005, 2, 20.095675644769436),
    (0.462932, 1.0399, 4.32963, -0.631247, 0.73509, 4, 7323151.3932930725),
    (0.000833, 1.9158, 0.76324, -0.048584, 0.37926, 3, 1204.0335431930166),
    (0.498862, 1.7997, 8.56821, -0.094894, 0.03813, 4, 266.52950133647005),
    (0.302112, 1.5262, 0.10513, -0.050729, 0.47201, 3, 17.230404532954754),
    (0.00919, 1.3786, 1.13331, -0.800901, 0.44409, 3, 54.4588984277371),
    (0.000872, 1.8721, 3.48405, -0.044593, 0.03353, 6, 10884.410457615828),
    (0.040548, 1.6225, 0.14903, -0.192068, 0.52191, 6, 3.040655680175234),
    (0.068796, 1.0872, 0.27781, -0.568219, 0.09687, 6, 0.8413583785390861),
    (0.005921, 1.6264, 3.04702, -1.850393, 0.44434, 2, 18.141751863201936),
    (0.361338, 1.7599, 3.85185, -0.639891, 0.22257, 6, 125.46239062664445),
    (0.047247, 1.1068, 2.46213, -0.019151, 0.01012, 3, 1813.514170872239),
    (0.006614, 1.9182, 0.65217, -0.782561, 0.65874, 2, 5.040092489979594),
    (0.039888, 1.4313, 6.51434, -0.08924, 0.01442, 6, 1827.6253486258481),
    (0.147479, 1.6422, 0.39565, -0.207728, 0.37182, 3, 10.734473395112444),
    (0.000941, 1.8705, 1.06821, -0.0135, 0.0222, 4, 293.24516871635507),
    (0.298234, 1.9988, 3.8525, -0.97562, 0.44698, 3, 15.815287605194923),
    (0.000553, 1.9784, 3.74366, -0.02227, 0.01854, 3, 308.3414140817199),
    (0.059251, 1.0372, 7.15527, -0.111268, 0.03618, 4, 3258326.7238437464),
    (0.008933, 1.7272, 2.26579, -0.007939, 0.03711, 4, 68805.87075551337),
    (0.052107, 1.6326, 1.72836, -0.03714, 0.01579, 4, 28.16910240371508),
    (0.006429, 1.5637, 3.35378, -0.35094, 0.75546, 4, 50076.745242866244),
    (0.034334, 1.1473, 0.60893, -0.24235, 0.14028, 4, 231.0735012267999),
    (0.441347, 1.7336, 5.71417, -0.224492, 0.67561, 3, 1798.2488924205213),
    (0.07672, 1.4886, 1.45784, -0.166292, 0.37578, 4, 3738.234886844665),
    (0.000911, 1.571, 0.13873, -0.149512, 0.74142, 2, 25.46487541244207),
    (0.080776, 1.9936, 0.34703, -0.007764, 0.03925, 2, 13.254565663913978),
    (0.26857, 1.7683, 2.29318, -0.251472, 0.39668, 4, 657.0180172183647),
    (0.109447, 1.5912, 1.44386, -0.280222, 0.65636, 6, 81371.33907912082),
    (0.048556, 1.3487, 2.59393, -0.243969, 0.65159, 3, 4777.718555877744),
    (0.072466, 1.8541, 3.07554, -0.010268, 0.02399, 3, 744.414348583036),
    (0.308894, 1.4839, 0.22103, -0.024638, 0.23731, 3, 91.55521089603016),
    (0.008623, 1.0507, 1.46208, -1.310269, 0.21063, 6, 61723.54361614043),
    (0.029736, 1.6694, 0.92052, -0.0299, 0.01505, 6, 4.565352894490661),
    (0.000821, 1.1854, 0.17351, -0.143488, 0.49431, 3, 299.12033182654113),
    (0.0663, 1.0737, 7.33168, -0.310516, 0.83154, 3, 770320.397289025),
    (0.11163, 1.3483, 0.18558, -0.01247, 0.02662, 2, 7.573577820678046),
    (0.077965, 1.7545, 6.6948, -0.277028, 0.7059, 3, 5218.633432053288),
    (0.035011, 1.1983, 0.20384, -0.002023, 0.01198, 6, 167861.4109501743),
    (0.097933, 1.7549, 1.30059, -0.008933, 0.01121, 6, 740.5997126028968),
    (0.438059, 1.0423, 0.10106, -0.066379, 0.6192, 2, 57.39108470633821),
    (0.050056, 1.2278, 0.12855, -0.163324, 0.58547, 2, 18.101920765157008),
    (0.480517, 1.8668, 0.47553, -0.166786, 0.23973, 2, 1.9586840726102495),
    (0.091564, 1.0461, 0.44114, -0.010189, 0.07005, 2, 492.93535019969164),
    (0.008633, 1.7359, 3.27403, -0.190517, 0.20574, 6, 73636.94821536502),
    (0.034323, 1.1299, 0.65585, -0.143952, 0.90648, 4, 510844.0131467544),
    (0.468024, 1.4072, 0.35579, -0.009165, 0.0465, 2, 10.257449055532307),
];
